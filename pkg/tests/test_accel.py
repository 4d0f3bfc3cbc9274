"""The numba and numpy kernel paths must agree."""

import numpy as np
import pytest

from lvce import _accel

pytestmark = pytest.mark.skipif(not _accel.NUMBA_ENABLED, reason="numba path disabled")


def test_trilinear_paths_agree(rng):
    data = rng.random((7, 5, 6))
    coords = rng.uniform(-1.0, 7.0, (500, 3))
    coords[:5] = [[0, 0, 0], [6, 4, 5], [6.0000000001, 4, 5], [3, 2, 1], [-1e-12, 0, 0]]
    v_nb, g_nb = _accel._trilinear_nb(data, coords, True)
    v_np, g_np = _accel._trilinear_np(data, coords, True)
    np.testing.assert_allclose(v_nb, v_np, rtol=0, atol=1e-14)
    np.testing.assert_allclose(g_nb, g_np, rtol=0, atol=1e-13)


def test_trilinear_gradient_matches_finite_difference(rng):
    data = rng.random((6, 6, 6))
    coords = rng.uniform(0.5, 4.5, (50, 3))
    _, grad = _accel.trilinear_sample(data, coords, with_grad=True)
    eps = 1e-6
    for axis in range(3):
        step = np.zeros(3)
        step[axis] = eps
        plus, _ = _accel.trilinear_sample(data, coords + step)
        minus, _ = _accel.trilinear_sample(data, coords - step)
        np.testing.assert_allclose(grad[:, axis], (plus - minus) / (2 * eps), atol=1e-7)


@pytest.mark.parametrize("k,stride", [(3, 1), (2, 2), (1, 1), (3, 2)])
def test_im2col_col2im_paths_agree(rng, k, stride):
    xp = rng.random((3, 9, 8, 7))
    out = tuple((d - k) // stride + 1 for d in xp.shape[1:])
    a = _accel._im2col_nb(xp, k, stride, *out)
    b = _accel._im2col_np(xp, k, stride, out)
    np.testing.assert_array_equal(a, b)
    cols = rng.random(a.shape)
    c = _accel._col2im_nb(cols, np.zeros(xp.shape), k, stride, *out)
    d = _accel._col2im_np(cols, xp.shape, k, stride, out)
    np.testing.assert_allclose(c, d, atol=1e-12)
    # adjointness: <im2col(x), cols> == <x, col2im(cols)>
    assert abs(np.sum(a * cols) - np.sum(xp * c)) < 1e-9


def test_correlate_paths_agree(rng):
    vol = rng.random((12, 9, 14))
    taps = rng.random(11)
    a = _accel._correlate_separable_nb(vol, taps)
    b = vol
    for axis in range(3):
        b = _accel._correlate_axis_np(b, taps, axis)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_signed_rank_sums_paths_agree(rng):
    ranks2 = rng.integers(1, 30, 10)
    np.testing.assert_array_equal(
        _accel._signed_rank_sums_nb(ranks2), _accel._signed_rank_sums_np(ranks2)
    )
