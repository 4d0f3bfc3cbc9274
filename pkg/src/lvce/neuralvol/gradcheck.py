"""Central finite-difference check of model gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as _tensor
from .tensor import Tensor, mse_loss
from .vnet import VNetModel

# gradients smaller than this are compared in absolute rather than relative terms
ABS_FLOOR = 1e-7


@dataclass
class GradCheckReport:
    n_checked: int = 0
    max_rel_error: float = 0.0
    tolerance: float = 1e-4
    failures: list = field(default_factory=list)
    n_redrawn: int = 0

    @property
    def passed(self) -> bool:
        return not self.failures


def _loss(model: VNetModel, x: np.ndarray, target: np.ndarray):
    """Loss value and the activation sign patterns seen during the forward pass."""
    _tensor.sign_recorder = []
    try:
        value = float(mse_loss(model.forward(Tensor(x)), target[None]).data)
        return value, _tensor.sign_recorder
    finally:
        _tensor.sign_recorder = None


def _same_pattern(a: list, b: list) -> bool:
    return len(a) == len(b) and all(np.array_equal(p, q) for p, q in zip(a, b))


def gradient_check(model: VNetModel, inputs: np.ndarray, target: np.ndarray, epsilon: float = 1e-5,
                   tolerance: float = 1e-4, fraction: float = 0.01, seed: int = 0,
                   min_per_tensor: int = 1, max_redraws: int = 20) -> GradCheckReport:
    """Compare backprop gradients of the MSE loss with central differences.

    Checks a random ``fraction`` of all parameter entries (at least
    ``min_per_tensor`` from every tensor) and records entries whose relative
    error exceeds ``tolerance``. Run on a float64 model for meaningful results.

    A perturbation that flips the sign of any ReLU/PReLU pre-activation
    straddles a point where the loss is not differentiable, so the central
    difference is not an estimate of the derivative there. Such entries are
    replaced by a fresh draw from the same tensor (counted in ``n_redrawn``);
    after ``max_redraws`` attempts the last entry is checked regardless.
    """
    report = GradCheckReport(tolerance=tolerance)
    if model.n_parameters == 0:
        return report
    inputs = np.asarray(inputs, dtype=model.dtype)
    target = np.asarray(target, dtype=model.dtype)
    model.zero_grad()
    _tensor.sign_recorder = []
    try:
        loss = mse_loss(model.forward(Tensor(inputs)), target[None])
        base_pattern = _tensor.sign_recorder
    finally:
        _tensor.sign_recorder = None
    loss.backward()
    rng = np.random.default_rng(seed)
    for name, tensor in model:
        analytic = np.zeros_like(tensor.data) if tensor.grad is None else tensor.grad
        count = min(max(min_per_tensor, int(round(fraction * tensor.size))), tensor.size)
        order = rng.permutation(tensor.size)
        flat = tensor.data.reshape(-1)
        cursor, checked = 0, 0
        while checked < count and cursor < tensor.size:
            i = order[cursor]
            cursor += 1
            orig = flat[i]
            flat[i] = orig + epsilon
            up, p_up = _loss(model, inputs, target)
            flat[i] = orig - epsilon
            down, p_down = _loss(model, inputs, target)
            flat[i] = orig
            smooth = _same_pattern(p_up, base_pattern) and _same_pattern(p_down, base_pattern)
            spare = tensor.size - cursor >= count - checked
            if not smooth and spare and cursor - checked <= max_redraws:
                report.n_redrawn += 1
                continue
            numeric = (up - down) / (2 * epsilon)
            a = float(analytic.reshape(-1)[i])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), ABS_FLOOR)
            report.n_checked += 1
            checked += 1
            report.max_rel_error = max(report.max_rel_error, rel)
            if rel > tolerance:
                report.failures.append((name, int(i), a, numeric, rel))
    model.zero_grad()
    return report
