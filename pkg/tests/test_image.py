import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dslic.image import (
    ImageFormatError,
    check_image,
    features_to_image,
    read_image,
    to_features,
    write_image,
)


def test_single_pixel_features():
    img = np.array([[[0.5, 0.2, 0.9]]])
    np.testing.assert_array_equal(to_features(img), [[0, 0, 0.5, 0.2, 0.9]])


def test_x_varies_fastest():
    feats = to_features(np.zeros((1, 2, 3)))
    np.testing.assert_array_equal(feats[:, :2], [[0, 0], [1, 0]])
    feats = to_features(np.zeros((2, 1, 3)))
    np.testing.assert_array_equal(feats[:, :2], [[0, 0], [0, 1]])


def test_gradient_image_round_trip():
    y, x = np.mgrid[0:3, 0:3] / 2.0
    img = np.stack([x, y, (x + y) / 2], axis=-1)
    feats = to_features(img)
    assert feats.shape == (9, 5)
    np.testing.assert_array_equal(features_to_image(feats, 3, 3), img)
    for i, (px, py) in enumerate(feats[:, :2]):
        assert (py, px) == divmod(i, 3)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6), st.just(3)), elements=st.floats(0, 1)))
def test_features_round_trip_property(img):
    h, w, _ = img.shape
    np.testing.assert_array_equal(features_to_image(to_features(img), h, w), img)


@pytest.mark.parametrize("bad", [np.zeros((2, 2)), np.zeros((2, 2, 4)), np.full((1, 1, 3), 1.5), np.full((1, 1, 3), np.nan)])
def test_check_image_rejects(bad):
    with pytest.raises(ValueError):
        check_image(bad)


@pytest.mark.parametrize("ext", [".ppm", ".png"])
def test_write_read_quantization(tmp_path, rng, ext):
    img = rng.random((16, 16, 3))
    path = tmp_path / f"img{ext}"
    write_image(img, str(path))
    back = read_image(str(path))
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12


def test_black_image_bytes(tmp_path):
    path = tmp_path / "black.ppm"
    write_image(np.zeros((2, 3, 3)), str(path))
    assert path.read_bytes() == b"P6\n3 2\n255\n" + bytes(18)


def test_hand_authored_p6(tmp_path):
    raster = bytes([255, 0, 0, 0, 255, 0, 0, 0, 255, 51, 102, 204])
    path = tmp_path / "fixture.ppm"
    path.write_bytes(b"P6\n# two by two\n2 2\n255\n" + raster)
    img = read_image(str(path))
    expected = np.frombuffer(raster, dtype=np.uint8).reshape(2, 2, 3) / 255
    np.testing.assert_array_equal(img, expected)
    np.testing.assert_allclose(img[1, 1], [0.2, 0.4, 0.8])


def test_read_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_image(str(tmp_path / "missing.ppm"))
    bad = tmp_path / "bad.ppm"
    bad.write_bytes(b"P3\n1 1\n255\n0 0 0\n")
    with pytest.raises(ImageFormatError):
        read_image(str(bad))
    deep = tmp_path / "deep.ppm"
    deep.write_bytes(b"P6\n1 1\n65535\n" + bytes(6))
    with pytest.raises(ImageFormatError):
        read_image(str(deep))
    short = tmp_path / "short.ppm"
    short.write_bytes(b"P6\n2 2\n255\n" + bytes(5))
    with pytest.raises(ImageFormatError):
        read_image(str(short))
    with pytest.raises(ImageFormatError):
        read_image(str(tmp_path / "x.bmp"))
