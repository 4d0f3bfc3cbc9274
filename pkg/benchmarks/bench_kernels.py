"""Compare the numba and pure-numpy variants of the hot kernels.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--size D]

Each kernel is timed on identical inputs with both backends and the
outputs are checked to agree. JIT compilation is excluded by a warm-up call.
"""

import argparse
import time

import numpy as np

from lvce import _accel


def best_of(fn, repeat):
    fn()  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(size, rng):
    vol = rng.random((size, size, size))
    coords = rng.uniform(-1, size, (size ** 3, 3))
    k, stride = 3, 1
    xp = rng.random((8, size + 2, size + 2, size + 2))
    out_dims = (size, size, size)
    cols = _accel._im2col_np(xp, k, stride, out_dims)
    taps = np.exp(-0.5 * (np.arange(-5, 6) / 1.5) ** 2)
    taps /= taps.sum()
    ranks2 = 2 * np.arange(1, 13, dtype=np.int64)
    return {
        "trilinear_sample": (
            lambda: _accel._trilinear_nb(vol, coords, True),
            lambda: _accel._trilinear_np(vol, coords, True),
        ),
        "im2col": (
            lambda: _accel._im2col_nb(xp, k, stride, *out_dims),
            lambda: _accel._im2col_np(xp, k, stride, out_dims),
        ),
        "col2im": (
            lambda: _accel._col2im_nb(cols, np.zeros(xp.shape), k, stride, *out_dims),
            lambda: _accel._col2im_np(cols, xp.shape, k, stride, out_dims),
        ),
        "correlate_separable": (
            lambda: _accel._correlate_separable_nb(vol, taps),
            lambda: _correlate_np(vol, taps),
        ),
        "signed_rank_sums(n=12)": (
            lambda: _accel._signed_rank_sums_nb(ranks2),
            lambda: _accel._signed_rank_sums_np(ranks2),
        ),
    }


def _correlate_np(vol, taps):
    out = vol
    for axis in range(3):
        out = _accel._correlate_axis_np(out, taps, axis)
    return out


def _agree(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.allclose(x, y, rtol=1e-10, atol=1e-12) for x, y in zip(a, b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, default=32, help="cubic volume edge length")
    args = ap.parse_args(argv)
    if not _accel.NUMBA_ENABLED:
        raise SystemExit("numba backend unavailable (is LVCE_NUMBA=0 set?)")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<24} {'numba [ms]':>11} {'numpy [ms]':>11} {'speedup':>8}  agree")
    for name, (nb, npf) in cases(args.size, rng).items():
        t_nb = best_of(nb, args.repeat)
        t_np = best_of(npf, args.repeat)
        ok = _agree(nb(), npf())
        print(f"{name:<24} {1e3 * t_nb:11.2f} {1e3 * t_np:11.2f} {t_np / t_nb:8.1f}  {ok}")


if __name__ == "__main__":
    main()
