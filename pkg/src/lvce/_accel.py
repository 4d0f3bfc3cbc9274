"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports and the environment variable
``LVCE_NUMBA`` is not set to ``0``/``off``/``false``. Both paths compute the
same quantities; tests run each kernel through both and compare.
"""

from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_FLAG = os.environ.get("LVCE_NUMBA", "1").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_ENABLED = numba is not None and _FLAG not in ("0", "off", "false", "no")

# tolerance for "on the support boundary" tests in voxel units
_EDGE_EPS = 1e-9


def backend() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"


# ---------------------------------------------------------------------------
# trilinear sampling
# ---------------------------------------------------------------------------


def _trilinear_np(data, coords, with_grad):
    dims = np.array(data.shape)
    n = coords.shape[0]
    values = np.zeros(n, dtype=np.float64)
    grad = np.zeros((n, 3), dtype=np.float64) if with_grad else None

    inside = np.all((coords >= -_EDGE_EPS) & (coords <= dims - 1 + _EDGE_EPS), axis=1)
    p = np.clip(coords[inside], 0.0, dims - 1)
    i0 = np.minimum(np.floor(p), np.maximum(dims - 2, 0)).astype(np.int64)
    f = p - i0
    i1 = np.minimum(i0 + 1, dims - 1)

    flat = data.ravel()
    sy, sz = data.shape[1] * data.shape[2], data.shape[2]

    def at(ix, iy, iz):
        return flat[ix * sy + iy * sz + iz]

    c000 = at(i0[:, 0], i0[:, 1], i0[:, 2])
    c100 = at(i1[:, 0], i0[:, 1], i0[:, 2])
    c010 = at(i0[:, 0], i1[:, 1], i0[:, 2])
    c110 = at(i1[:, 0], i1[:, 1], i0[:, 2])
    c001 = at(i0[:, 0], i0[:, 1], i1[:, 2])
    c101 = at(i1[:, 0], i0[:, 1], i1[:, 2])
    c011 = at(i0[:, 0], i1[:, 1], i1[:, 2])
    c111 = at(i1[:, 0], i1[:, 1], i1[:, 2])
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz

    c00 = c000 * gx + c100 * fx
    c10 = c010 * gx + c110 * fx
    c01 = c001 * gx + c101 * fx
    c11 = c011 * gx + c111 * fx
    c0 = c00 * gy + c10 * fy
    c1 = c01 * gy + c11 * fy
    values[inside] = c0 * gz + c1 * fz

    if with_grad:
        dx = ((c100 - c000) * gy + (c110 - c010) * fy) * gz + (
            (c101 - c001) * gy + (c111 - c011) * fy
        ) * fz
        dy = (c10 - c00) * gz + (c11 - c01) * fz
        dz = c1 - c0
        grad[inside] = np.stack([dx, dy, dz], axis=1)
    return values, grad


if NUMBA_ENABLED:

    @numba.njit(cache=True)
    def _trilinear_nb(data, coords, with_grad):
        nx, ny, nz = data.shape
        n = coords.shape[0]
        values = np.zeros(n, dtype=np.float64)
        grad = np.zeros((n, 3), dtype=np.float64)
        for k in range(n):
            px, py, pz = coords[k, 0], coords[k, 1], coords[k, 2]
            if (
                px < -_EDGE_EPS or py < -_EDGE_EPS or pz < -_EDGE_EPS
                or px > nx - 1 + _EDGE_EPS or py > ny - 1 + _EDGE_EPS
                or pz > nz - 1 + _EDGE_EPS
            ):
                continue
            px = min(max(px, 0.0), nx - 1.0)
            py = min(max(py, 0.0), ny - 1.0)
            pz = min(max(pz, 0.0), nz - 1.0)
            x0 = min(int(np.floor(px)), max(nx - 2, 0))
            y0 = min(int(np.floor(py)), max(ny - 2, 0))
            z0 = min(int(np.floor(pz)), max(nz - 2, 0))
            x1 = min(x0 + 1, nx - 1)
            y1 = min(y0 + 1, ny - 1)
            z1 = min(z0 + 1, nz - 1)
            fx, fy, fz = px - x0, py - y0, pz - z0
            gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
            c000 = data[x0, y0, z0]
            c100 = data[x1, y0, z0]
            c010 = data[x0, y1, z0]
            c110 = data[x1, y1, z0]
            c001 = data[x0, y0, z1]
            c101 = data[x1, y0, z1]
            c011 = data[x0, y1, z1]
            c111 = data[x1, y1, z1]
            c00 = c000 * gx + c100 * fx
            c10 = c010 * gx + c110 * fx
            c01 = c001 * gx + c101 * fx
            c11 = c011 * gx + c111 * fx
            c0 = c00 * gy + c10 * fy
            c1 = c01 * gy + c11 * fy
            values[k] = c0 * gz + c1 * fz
            if with_grad:
                grad[k, 0] = ((c100 - c000) * gy + (c110 - c010) * fy) * gz + (
                    (c101 - c001) * gy + (c111 - c011) * fy
                ) * fz
                grad[k, 1] = (c10 - c00) * gz + (c11 - c01) * fz
                grad[k, 2] = c1 - c0
        return values, grad


def trilinear_sample(data: np.ndarray, coords: np.ndarray, with_grad: bool = False):
    """Sample a 3D array at fractional voxel coordinates.

    Points outside the hull of voxel centres, ``[0, dim-1]`` per axis,
    evaluate to 0 with zero gradient.

    Returns ``(values, grad)``; ``grad`` is ``None`` unless ``with_grad``.
    """
    data = np.ascontiguousarray(data, dtype=np.float64)
    coords = np.ascontiguousarray(coords, dtype=np.float64).reshape(-1, 3)
    if NUMBA_ENABLED:
        values, grad = _trilinear_nb(data, coords, with_grad)
        return values, (grad if with_grad else None)
    return _trilinear_np(data, coords, with_grad)


# ---------------------------------------------------------------------------
# im2col / col2im for strided 3D convolution
# ---------------------------------------------------------------------------


def _im2col_np(xp, k, stride, out_dims):
    win = sliding_window_view(xp, (k, k, k), axis=(1, 2, 3))
    win = win[:, :: stride, :: stride, :: stride][
        :, : out_dims[0], : out_dims[1], : out_dims[2]
    ]
    # (C, Ox, Oy, Oz, k, k, k) -> (Ox, Oy, Oz, C, k, k, k)
    cols = win.transpose(1, 2, 3, 0, 4, 5, 6)
    return np.ascontiguousarray(cols).reshape(-1, xp.shape[0] * k ** 3)


def _col2im_np(cols, padded_shape, k, stride, out_dims):
    c = padded_shape[0]
    ox, oy, oz = out_dims
    cols = cols.reshape(ox, oy, oz, c, k, k, k)
    out = np.zeros(padded_shape, dtype=cols.dtype)
    for a in range(k):
        for b in range(k):
            for d in range(k):
                out[
                    :,
                    a : a + stride * ox : stride,
                    b : b + stride * oy : stride,
                    d : d + stride * oz : stride,
                ] += cols[:, :, :, :, a, b, d].transpose(3, 0, 1, 2)
    return out


if NUMBA_ENABLED:

    # loop order keeps one (oz, C*k^3) row block hot in cache while reading
    # the input contiguously along z

    @numba.njit(cache=True)
    def _im2col_nb(xp, k, stride, ox, oy, oz):
        c = xp.shape[0]
        cols = np.empty((ox * oy * oz, c * k * k * k), dtype=xp.dtype)
        for x in range(ox):
            for y in range(oy):
                row0 = (x * oy + y) * oz
                j = 0
                for ci in range(c):
                    for a in range(k):
                        sx = x * stride + a
                        for b in range(k):
                            sy = y * stride + b
                            for d in range(k):
                                for z in range(oz):
                                    cols[row0 + z, j] = xp[ci, sx, sy, z * stride + d]
                                j += 1
        return cols

    @numba.njit(cache=True)
    def _col2im_nb(cols, out, k, stride, ox, oy, oz):
        c = out.shape[0]
        for x in range(ox):
            for y in range(oy):
                row0 = (x * oy + y) * oz
                j = 0
                for ci in range(c):
                    for a in range(k):
                        sx = x * stride + a
                        for b in range(k):
                            sy = y * stride + b
                            for d in range(k):
                                for z in range(oz):
                                    out[ci, sx, sy, z * stride + d] += cols[row0 + z, j]
                                j += 1
        return out


def im2col(xp: np.ndarray, k: int, stride: int, out_dims) -> np.ndarray:
    """Unfold a padded ``(C, X, Y, Z)`` array into ``(Ox*Oy*Oz, C*k^3)`` rows.

    Row-per-output-voxel layout keeps the GEMM's long dimension first, which
    runs markedly faster than the transposed layout for small channel counts.
    """
    if NUMBA_ENABLED:
        return _im2col_nb(np.ascontiguousarray(xp), k, stride, *out_dims)
    return _im2col_np(xp, k, stride, out_dims)


def col2im(cols: np.ndarray, padded_shape, k: int, stride: int, out_dims) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add rows back into a padded array."""
    if NUMBA_ENABLED:
        out = np.zeros(padded_shape, dtype=cols.dtype)
        return _col2im_nb(np.ascontiguousarray(cols), out, k, stride, *out_dims)
    return _col2im_np(cols, padded_shape, k, stride, out_dims)


# ---------------------------------------------------------------------------
# separable zero-padded correlation (SSIM window)
# ---------------------------------------------------------------------------


def _correlate_axis_np(vol, taps, axis):
    r = len(taps) // 2
    out = np.zeros_like(vol)
    n = vol.shape[axis]
    for t, w in enumerate(taps):
        shift = t - r
        lo, hi = max(0, -shift), min(n, n - shift)
        if lo >= hi:
            continue
        dst = [slice(None)] * 3
        src = [slice(None)] * 3
        dst[axis] = slice(lo, hi)
        src[axis] = slice(lo + shift, hi + shift)
        out[tuple(dst)] += w * vol[tuple(src)]
    return out


if NUMBA_ENABLED:

    @numba.njit(cache=True)
    def _correlate_separable_nb(vol, taps):
        r = taps.shape[0] // 2
        nx, ny, nz = vol.shape
        a = np.zeros_like(vol)
        for x in range(nx):
            for y in range(ny):
                for z in range(nz):
                    acc = 0.0
                    for t in range(taps.shape[0]):
                        s = x + t - r
                        if 0 <= s < nx:
                            acc += taps[t] * vol[s, y, z]
                    a[x, y, z] = acc
        b = np.zeros_like(vol)
        for x in range(nx):
            for y in range(ny):
                for z in range(nz):
                    acc = 0.0
                    for t in range(taps.shape[0]):
                        s = y + t - r
                        if 0 <= s < ny:
                            acc += taps[t] * a[x, s, z]
                    b[x, y, z] = acc
        c = np.zeros_like(vol)
        for x in range(nx):
            for y in range(ny):
                for z in range(nz):
                    acc = 0.0
                    for t in range(taps.shape[0]):
                        s = z + t - r
                        if 0 <= s < nz:
                            acc += taps[t] * b[x, y, s]
                    c[x, y, z] = acc
        return c


def correlate_separable(vol: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Correlate a 3D array with the outer product ``taps x taps x taps``.

    Values beyond the array boundary are treated as zero; output has the
    input shape.
    """
    vol = np.ascontiguousarray(vol, dtype=np.float64)
    taps = np.ascontiguousarray(taps, dtype=np.float64)
    if NUMBA_ENABLED:
        return _correlate_separable_nb(vol, taps)
    out = vol
    for axis in range(3):
        out = _correlate_axis_np(out, taps, axis)
    return out


# ---------------------------------------------------------------------------
# exact Wilcoxon signed-rank null distribution by enumeration
# ---------------------------------------------------------------------------


def _signed_rank_sums_np(ranks2):
    n = ranks2.shape[0]
    masks = np.arange(1 << n, dtype=np.int64)
    bits = (masks[:, None] >> np.arange(n, dtype=np.int64)) & 1
    return bits @ ranks2


if NUMBA_ENABLED:

    @numba.njit(cache=True)
    def _signed_rank_sums_nb(ranks2):
        n = ranks2.shape[0]
        total = 1 << n
        sums = np.zeros(total, dtype=np.int64)
        for m in range(total):
            s = 0
            for j in range(n):
                if (m >> j) & 1:
                    s += ranks2[j]
            sums[m] = s
        return sums


def signed_rank_sums(ranks2: np.ndarray) -> np.ndarray:
    """Positive-rank sum for each of the ``2**n`` sign assignments.

    ``ranks2`` holds doubled ranks as integers so tied (half-integer)
    average ranks stay exact.
    """
    ranks2 = np.ascontiguousarray(ranks2, dtype=np.int64)
    if NUMBA_ENABLED:
        return _signed_rank_sums_nb(ranks2)
    return _signed_rank_sums_np(ranks2)
