"""Reverse-mode autodiff over numpy arrays.

Each :class:`Tensor` produced by an operation keeps references to its
parents and a closure that pushes ``out.grad`` back into them. Closures
never capture their own output, so a graph is freed by reference counting
as soon as the loss tensor goes out of scope.
:meth:`Tensor.backward` runs those closures in reverse topological order.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .. import _accel
from ..errors import ShapeError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), op: str = ""):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = op

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()

        def visit(t):
            stack = [(t, False)]
            while stack:
                node, done = stack.pop()
                if done:
                    order.append(node)
                    continue
                if id(node) in seen:
                    continue
                seen.add(id(node))
                stack.append((node, True))
                for p in node._parents:
                    if id(p) not in seen:
                        stack.append((p, False))

        visit(self)
        self._accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # elementwise arithmetic ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(as_tensor(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def sum(self):
        return total(self)

    def mean(self):
        return mean(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _needs_grad(*ts: Tensor) -> bool:
    return any(t.requires_grad for t in ts)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _make(data, parents: Sequence[Tensor], op: str, backward) -> Tensor:
    out = Tensor(data, _needs_grad(*parents), tuple(parents), op)
    if out.requires_grad:
        # takes the gradient as an argument so the closure never references ``out``
        out._backward = backward
    return out


def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)

    def bw(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), "add", bw)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), "neg", lambda g: a._accumulate(-g))


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)

    def bw(g):
        a._accumulate(_unbroadcast(g * b.data, a.shape))
        b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), "mul", bw)


def total(a: Tensor) -> Tensor:
    return _make(a.data.sum(), (a,), "sum", lambda g: a._accumulate(np.broadcast_to(g, a.shape)))


def mean(a: Tensor) -> Tensor:
    n = a.size
    return _make(a.data.mean(), (a,), "mean", lambda g: a._accumulate(np.broadcast_to(g / n, a.shape)))


# When a list, relu/prelu append their activation sign patterns to it.
# The gradient checker uses this to detect finite-difference steps that
# cross a kink of the piecewise-linear activations.
sign_recorder: list | None = None


def _record(pos: np.ndarray) -> None:
    if sign_recorder is not None:
        sign_recorder.append(pos)


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    _record(pos)
    return _make(np.where(pos, x.data, 0).astype(x.dtype), (x,), "relu", lambda g: x._accumulate(g * pos))


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """Channel-wise PReLU for ``(C, ...)`` inputs with a ``(C,)`` slope."""
    if slope.shape != (x.shape[0],):
        raise ShapeError(f"prelu slope shape {slope.shape} does not match {x.shape[0]} channels")
    a = slope.data.reshape((-1,) + (1,) * (x.data.ndim - 1))
    pos = x.data > 0
    _record(pos)
    out = np.where(pos, x.data, a * x.data)

    def bw(g):
        x._accumulate(np.where(pos, g, a * g))
        if slope.requires_grad:
            slope._accumulate((g * np.where(pos, 0, x.data)).reshape(x.shape[0], -1).sum(axis=1))

    return _make(out, (x, slope), "prelu", bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            t._accumulate(g[tuple(idx)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), "concat", bw)


def take_channels(x: Tensor, start: int, stop: int) -> Tensor:
    def bw(g):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        x._accumulate(full)

    return _make(x.data[start:stop].copy(), (x,), "slice", bw)


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean squared difference; gradient ``2 (pred - target) / N``."""
    target_data = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.shape != target_data.shape:
        raise ShapeError(f"mse_loss shape mismatch: {pred.shape} vs {target_data.shape}")
    diff = pred.data - target_data.astype(pred.dtype, copy=False)
    n = diff.size
    parents = (pred, target) if isinstance(target, Tensor) else (pred,)

    def bw(g):
        d = (2.0 / n) * diff * g
        pred._accumulate(d)
        if isinstance(target, Tensor):
            target._accumulate(-d)

    return _make(np.asarray(np.mean(diff * diff), dtype=pred.dtype), parents, "mse", bw)


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------


def _out_dims(dims, k, stride, padding):
    return tuple((d + 2 * padding - k) // stride + 1 for d in dims)


def _pad(a: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return a
    return np.pad(a, ((0, 0),) + ((padding, padding),) * 3)


def _unpad(a: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return a
    p = padding
    return a[:, p:-p, p:-p, p:-p]


def conv3d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``(Ci, X, Y, Z)`` with ``(Co, Ci, k, k, k)``, zero padding."""
    if x.data.ndim != 4 or kernel.data.ndim != 5:
        raise ShapeError(f"conv3d expects 4-D input and 5-D kernel, got {x.shape} and {kernel.shape}")
    co, ci, k = kernel.shape[0], kernel.shape[1], kernel.shape[2]
    if x.shape[0] != ci:
        raise ShapeError(f"conv3d channel mismatch: input has {x.shape[0]}, kernel expects {ci}")
    if kernel.shape[2:] != (k, k, k):
        raise ShapeError(f"conv3d kernel must be cubic, got {kernel.shape[2:]}")
    out_dims = _out_dims(x.shape[1:], k, stride, padding)
    if min(out_dims) < 1:
        raise ShapeError(f"conv3d output would be empty for input {x.shape} and kernel size {k}")
    xp = _pad(x.data, padding)
    cols = _accel.im2col(xp, k, stride, out_dims)
    w2 = kernel.data.reshape(co, -1)
    out = (cols @ w2.T).T
    if bias is not None:
        out = out + bias.data[:, None]
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def bw(g):
        g2 = g.reshape(co, -1)
        if kernel.requires_grad:
            kernel._accumulate((g2 @ cols).reshape(kernel.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g2.sum(axis=1))
        if x.requires_grad:
            dxp = _accel.col2im(g2.T @ w2, xp.shape, k, stride, out_dims)
            x._accumulate(_unpad(dxp, padding))

    return _make(np.ascontiguousarray(out).reshape((co,) + out_dims), parents, "conv3d", bw)


def conv_transpose3d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Adjoint of :func:`conv3d`; ``kernel`` is ``(Ci, Co, k, k, k)``.

    Output spatial size is ``(D - 1) * stride - 2 * padding + k``.
    """
    if x.data.ndim != 4 or kernel.data.ndim != 5:
        raise ShapeError(f"conv_transpose3d expects 4-D input and 5-D kernel, got {x.shape} and {kernel.shape}")
    ci, co, k = kernel.shape[0], kernel.shape[1], kernel.shape[2]
    if x.shape[0] != ci:
        raise ShapeError(f"conv_transpose3d channel mismatch: input has {x.shape[0]}, kernel expects {ci}")
    in_dims = x.shape[1:]
    padded = tuple((d - 1) * stride + k for d in in_dims)
    w2 = kernel.data.reshape(ci, -1)
    x2 = x.data.reshape(ci, -1)
    out = _unpad(_accel.col2im(x2.T @ w2, (co,) + padded, k, stride, in_dims), padding)
    if bias is not None:
        out = out + bias.data.reshape(-1, 1, 1, 1)
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def bw(g):
        gcols = _accel.im2col(_pad(g, padding), k, stride, in_dims)
        if kernel.requires_grad:
            kernel._accumulate((x2 @ gcols).reshape(kernel.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.reshape(co, -1).sum(axis=1))
        if x.requires_grad:
            x._accumulate((gcols @ w2.T).T.reshape(x.shape))

    return _make(np.ascontiguousarray(out), parents, "conv_transpose3d", bw)


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
