"""Image arrays, pixel feature matrices and PPM/PNG file I/O.

Images are float64 arrays of shape (H, W, 3) with values in [0, 1].
Pixel ``i`` is at row ``i // W`` and column ``i % W``; its spatial
coordinate is ``(x, y) = (column, row)``.
"""
from __future__ import annotations

import os
import re

import numpy as np

__all__ = [
    "ImageFormatError",
    "check_image",
    "to_features",
    "features_to_image",
    "pixel_coords",
    "read_image",
    "write_image",
    "read_ppm",
    "write_ppm",
]


class ImageFormatError(ValueError):
    """Raised for malformed or unsupported image files."""


def check_image(img, name="image", copy=False):
    """Validate an RGB image and return it as a float64 (H, W, 3) array."""
    arr = np.array(img, dtype=np.float64, copy=copy) if copy else np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must have at least one pixel")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


def pixel_coords(height, width):
    """(N, 2) array of (x, y) pixel positions in row-major order."""
    ys, xs = np.divmod(np.arange(height * width), width)
    return np.stack([xs, ys], axis=1).astype(np.float64)


def to_features(img):
    """Stack pixel positions and colors into an (N, 5) feature matrix."""
    img = check_image(img)
    h, w, _ = img.shape
    return np.hstack([pixel_coords(h, w), img.reshape(-1, 3)])


def features_to_image(features, height, width):
    """Inverse of :func:`to_features` on the color columns."""
    features = np.asarray(features, dtype=np.float64)
    return features[:, 2:5].reshape(height, width, 3).copy()


def _quantize(img):
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(img, path):
    img = check_image(img)
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(_quantize(img).tobytes())


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def read_ppm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise ImageFormatError(f"{path}: truncated PPM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P6":
        raise ImageFormatError(f"{path}: expected P6 magic, got {tokens[0]!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ImageFormatError(f"{path}: non-numeric PPM header field") from None
    if width < 1 or height < 1:
        raise ImageFormatError(f"{path}: bad dimensions {width}x{height}")
    if maxval != 255:
        raise ImageFormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise ImageFormatError(f"{path}: missing whitespace after PPM header")
    pos += 1
    n = width * height * 3
    raster = data[pos : pos + n]
    if len(raster) != n:
        raise ImageFormatError(f"{path}: expected {n} raster bytes, found {len(raster)}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3) / 255.0


def _format(path):
    ext = os.path.splitext(str(path))[1].lower()
    if ext in (".ppm", ".pnm"):
        return "ppm"
    if ext == ".png":
        return "png"
    raise ImageFormatError(f"unsupported image format: {path}")


def read_image(path):
    """Read a P6 PPM or 8-bit RGB PNG into a float image in [0, 1]."""
    fmt = _format(path)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    if fmt == "ppm":
        return read_ppm(path)
    from PIL import Image as PILImage

    with PILImage.open(path) as im:
        if im.mode != "RGB":
            raise ImageFormatError(f"{path}: only 8-bit RGB PNG is supported, got mode {im.mode}")
        return np.asarray(im, dtype=np.uint8) / 255.0


def write_image(img, path):
    """Write ``img`` as PPM or PNG depending on the file extension."""
    fmt = _format(path)
    if fmt == "ppm":
        write_ppm(img, path)
        return
    from PIL import Image as PILImage

    PILImage.fromarray(_quantize(check_image(img)), mode="RGB").save(path)
