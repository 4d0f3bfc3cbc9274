"""Adam optimizer and the reduce-on-plateau learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgumentError, TrainingDivergenceError


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, state: AdamState, lr: float, betas=(0.9, 0.999), eps: float = 1e-8) -> AdamState:
    """One Adam update with bias correction, in place on ``params``.

    ``params`` maps names to tensors carrying ``.grad``; a missing gradient
    counts as zero. Every gradient is validated before any parameter moves.
    """
    b1, b2 = betas
    for name, t in params.items():
        if t.grad is not None and not np.all(np.isfinite(t.grad)):
            raise TrainingDivergenceError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, t in params.items():
        g = np.zeros_like(t.data) if t.grad is None else t.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        t.data -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(t.data.dtype, copy=False)
    return state


@dataclass(frozen=True)
class SchedulerConfig:
    factor: float = 0.5
    patience: int = 10
    min_delta: float = 1e-4  # relative to the running best

    def __post_init__(self):
        if not 0 < self.factor < 1:
            raise InvalidArgumentError(f"scheduler factor must be in (0, 1), got {self.factor}")
        if self.patience < 1:
            raise InvalidArgumentError(f"scheduler patience must be >= 1, got {self.patience}")
        if self.min_delta < 0:
            raise InvalidArgumentError("scheduler min_delta must be non-negative")


@dataclass
class PlateauState:
    lr: float
    best: float = float("inf")
    bad_epochs: int = 0
    reductions: int = 0


def plateau_update(state: PlateauState, loss: float, cfg: SchedulerConfig = SchedulerConfig()) -> float:
    """Feed one epoch's monitored loss; returns the learning rate for the next epoch.

    An epoch improves when ``loss < best * (1 - min_delta)``. After
    ``patience`` consecutive non-improving epochs the rate is multiplied by
    ``factor``; the counter restarts and the best-loss tracker is reset to
    the current loss.
    """
    if not np.isfinite(loss):
        raise InvalidArgumentError(f"monitored loss must be finite, got {loss}")
    if state.best == float("inf") or loss < state.best * (1.0 - cfg.min_delta):
        state.best = loss
        state.bad_epochs = 0
        return state.lr
    state.bad_epochs += 1
    if state.bad_epochs >= cfg.patience:
        state.lr *= cfg.factor
        state.reductions += 1
        state.best = loss
        state.bad_epochs = 0
    return state.lr
