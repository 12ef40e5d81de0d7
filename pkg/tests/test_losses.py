import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dslic.losses import LossValue, mse_loss, objectness_loss, total_loss, tv_loss


def tv_naive(p):
    """Direct enumeration over positions with both a next row and column."""
    p = np.asarray(p, dtype=float)
    if p.ndim == 2:
        p = p[:, :, None]
    total = 0.0
    for c in range(p.shape[2]):
        for i in range(p.shape[0] - 1):
            for j in range(p.shape[1] - 1):
                a = p[i, j, c] - p[i + 1, j, c]
                b = p[i, j, c] - p[i, j + 1, c]
                total += np.sqrt(a * a + b * b)
    return total


def central_diff(f, x, idx, eps):
    xp, xm = x.copy(), x.copy()
    xp[idx] += eps
    xm[idx] -= eps
    return (f(xp) - f(xm)) / (2 * eps)


def test_tv_constant_and_tiny():
    assert tv_loss(np.full((5, 4, 3), 0.3), eps=0).value == 0.0
    assert tv_loss(np.full((5, 4, 3), 0.3)).value == pytest.approx(4 * 3 * 3 * 1e-6)
    assert tv_loss(np.zeros((1, 1, 3))).value == 0.0
    assert np.all(tv_loss(np.full((3, 3, 3), 0.7), eps=0).grad == 0)


def test_tv_two_by_two_hand_enumeration():
    p = np.array([[0.0, 1.0], [0.0, 1.0]])
    # Only the top-left position has both neighbours: |0 - 1| across, 0 down.
    assert tv_naive(p) == 1.0
    assert tv_loss(p, eps=0).value == 1.0


def test_tv_matches_naive(rng):
    p = rng.random((6, 7, 3))
    assert tv_loss(p, eps=0).value == pytest.approx(tv_naive(p), rel=1e-13)


def test_tv_gradient_finite_differences(rng):
    p = rng.random((6, 6, 3))
    g = tv_loss(p).grad
    for flat in rng.choice(p.size, 30, replace=False):
        idx = np.unravel_index(flat, p.shape)
        num = central_diff(lambda x: tv_loss(x).value, p, idx, 1e-6)
        assert abs(num - g[idx]) <= 1e-4 * max(abs(num), abs(g[idx]))


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.float64, (4, 5, 3), elements=st.floats(0, 1)),
    st.tuples(*[st.floats(-1, 1)] * 3),
)
def test_tv_shift_invariant(p, shift):
    shifted = p + np.array(shift)
    assert tv_loss(shifted, eps=0).value == pytest.approx(tv_loss(p, eps=0).value, rel=1e-9, abs=1e-9)


def test_objectness_examples(rng):
    out = objectness_loss([0.1, 0.9, 0.3])
    assert out.value == 0.9
    np.testing.assert_array_equal(out.grad, [0, 1, 0])
    tie = objectness_loss([0.5, 0.5])
    np.testing.assert_array_equal(tie.grad, [1, 0])
    grid = rng.random((13, 13, 5))
    best = -1.0
    for v in grid.ravel():
        best = max(best, v)
    res = objectness_loss(grid)
    assert res.value == best
    assert res.grad.sum() == 1 and grid[res.grad == 1][0] == best
    with pytest.raises(ValueError):
        objectness_loss([])


def test_total_loss(rng):
    tv = LossValue(0.2, rng.standard_normal((3, 3, 3)))
    obj = LossValue(0.7, rng.standard_normal((3, 3, 3)))
    out = total_loss(tv, obj, 2.5)
    assert out.value == pytest.approx(1.2)
    assert out.value == 2.5 * 0.2 + 0.7
    assert total_loss(tv, obj, 0.0).value == 0.7
    np.testing.assert_allclose(out.grad, 2.5 * tv.grad + obj.grad, rtol=0, atol=1e-15)


def test_mse_examples(rng):
    a = rng.random((8, 8, 3))
    assert mse_loss(a, a).value == 0.0
    one = mse_loss(np.array([[[0.0, 0, 0]]]), np.array([[[1.0, 0, 0]]]))
    assert one.value == 1.0
    b = rng.random((8, 8, 3))
    naive = 0.0
    for i in range(8):
        for j in range(8):
            for c in range(3):
                naive += (a[i, j, c] - b[i, j, c]) ** 2
    assert mse_loss(a, b).value == pytest.approx(naive / 64, abs=1e-12)
    np.testing.assert_allclose(mse_loss(a, b).grad, 2 / 64 * (a - b))
    with pytest.raises(ValueError):
        mse_loss(a, b[:4])
