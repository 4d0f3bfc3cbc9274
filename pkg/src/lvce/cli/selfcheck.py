"""Shift-and-add convolution reference used by ``lvce selftest``."""

from __future__ import annotations

import numpy as np

from ..neuralvol import Tensor, conv3d


def shift_add_conv3d(x, w, b, stride: int, pad: int):
    """Forward value and (dx, dw, db) for upstream gradient ``g`` via per-tap slicing."""
    xp = np.pad(x, ((0, 0),) + ((pad, pad),) * 3)
    k = w.shape[2]
    o = [(d + 2 * pad - k) // stride + 1 for d in x.shape[1:]]

    def window(a, bb, d):
        return xp[:, a:a + stride * (o[0] - 1) + 1:stride,
                  bb:bb + stride * (o[1] - 1) + 1:stride,
                  d:d + stride * (o[2] - 1) + 1:stride]

    out = np.broadcast_to(b[:, None, None, None], (w.shape[0], *o)).copy()
    for a in range(k):
        for bb in range(k):
            for d in range(k):
                out += np.einsum("om,mxyz->oxyz", w[:, :, a, bb, d], window(a, bb, d))

    def grads(g):
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(w)
        for a in range(k):
            for bb in range(k):
                for d in range(k):
                    dw[:, :, a, bb, d] = np.einsum("oxyz,mxyz->om", g, window(a, bb, d))
                    dxp[:, a:a + stride * (o[0] - 1) + 1:stride,
                        bb:bb + stride * (o[1] - 1) + 1:stride,
                        d:d + stride * (o[2] - 1) + 1:stride] += np.einsum("om,oxyz->mxyz", w[:, :, a, bb, d], g)
        X, Y, Z = x.shape[1:]
        return dxp[:, pad:pad + X, pad:pad + Y, pad:pad + Z], dw, g.sum(axis=(1, 2, 3))

    return out, grads


def conv_oracle_error(n_shapes: int = 5, seed: int = 0) -> float:
    """Largest absolute deviation of conv3d (value and gradients) from the reference."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_shapes):
        ci, co = rng.integers(1, 4, size=2)
        k = int(rng.choice([1, 2, 3]))
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, 2))
        dims = tuple(int(v) for v in rng.integers(k, k + 5, size=3))
        x = Tensor(rng.standard_normal((ci,) + dims), requires_grad=True)
        w = Tensor(rng.standard_normal((co, ci, k, k, k)), requires_grad=True)
        b = Tensor(rng.standard_normal(co), requires_grad=True)
        out = conv3d(x, w, b, stride=stride, padding=pad)
        ref, grads = shift_add_conv3d(x.data, w.data, b.data, stride, pad)
        g = rng.standard_normal(ref.shape)
        out.backward(g)
        dx, dw, db = grads(g)
        for a, r in ((out.data, ref), (x.grad, dx), (w.grad, dw), (b.grad, db)):
            worst = max(worst, float(np.max(np.abs(a - r))))
    return worst
