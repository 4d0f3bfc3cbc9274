"""Rigid registration by coarse-to-fine gradient descent on masked MSE.

Transforms act in physical (mm) coordinates. For parameters ``(angles, t)``
and rotation centre ``c`` (the physical centre of the fixed grid), a fixed
grid point ``p`` is mapped to ``R (p - c) + c + t`` in moving space, and
the warped image is ``moving(R (p - c) + c + t)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from ._accel import trilinear_sample
from .errors import InvalidArgumentError, RegistrationError
from .volcore.geometry import (
    euler_from_matrix,
    grid_indices,
    rotation_jacobian,
    rotation_matrix,
    wrap_angle,
)
from .volcore.ops import sample_nearest
from .volcore.volume import Volume

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RigidParams:
    rotation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "rotation", tuple(float(a) for a in wrap_angle(self.rotation)))
        object.__setattr__(self, "translation", tuple(float(t) for t in self.translation))

    @property
    def is_identity(self) -> bool:
        return not any(self.rotation) and not any(self.translation)

    @property
    def matrix(self) -> np.ndarray:
        return rotation_matrix(self.rotation)

    def inverse(self) -> "RigidParams":
        r = self.matrix
        return RigidParams(tuple(euler_from_matrix(r.T)), tuple(-(r.T @ np.asarray(self.translation))))

    def map_points(self, points: np.ndarray, center) -> np.ndarray:
        """Apply ``p -> R (p - c) + c + t`` to an ``(N, 3)`` array of mm positions."""
        c = np.asarray(center, dtype=np.float64)
        return (points - c) @ self.matrix.T + c + np.asarray(self.translation)

    def to_dict(self) -> dict:
        return {"rotation": list(self.rotation), "translation": list(self.translation)}

    @classmethod
    def from_dict(cls, d) -> "RigidParams":
        return cls(tuple(d["rotation"]), tuple(d["translation"]))


@dataclass(frozen=True)
class RegistrationConfig:
    pyramid_levels: int = 3
    max_iters_per_level: int = 500
    step_size: float = 1.0
    convergence_tol: float = 1e-9
    interpolation: str = "trilinear"
    use_mask: bool = True

    def __post_init__(self):
        if self.pyramid_levels < 1 or self.max_iters_per_level < 1:
            raise InvalidArgumentError("pyramid_levels and max_iters_per_level must be positive")
        if self.step_size <= 0 or self.convergence_tol <= 0:
            raise InvalidArgumentError("step_size and convergence_tol must be positive")
        if self.interpolation != "trilinear":
            raise InvalidArgumentError(f"unsupported interpolation {self.interpolation!r}")


@dataclass
class LevelRecord:
    factor: int
    start_mse: float
    end_mse: float
    iterations: int


@dataclass
class RegistrationReport:
    params: RigidParams
    initial_mse: float
    final_mse: float
    levels: list[LevelRecord] = field(default_factory=list)


def physical_points(vol: Volume) -> np.ndarray:
    return np.asarray(vol.origin) + grid_indices(vol.dims) * np.asarray(vol.spacing)


def physical_center(vol: Volume) -> np.ndarray:
    return np.asarray(vol.origin) + (np.asarray(vol.dims) - 1) / 2.0 * np.asarray(vol.spacing)


def warp_volume(vol: Volume, params: RigidParams, reference: Volume | None = None, center=None) -> Volume:
    """Resample ``vol`` under ``params`` onto the grid of ``reference`` (default: its own grid).

    Intensities are trilinear, the mask nearest-neighbour, zero fill. The
    identity transform on the volume's own grid returns an exact copy.
    """
    ref = vol if reference is None else reference
    if params.is_identity and ref is vol:
        return vol.replace(data=vol.data.copy(), mask=None if vol.mask is None else vol.mask.copy())
    c = physical_center(ref) if center is None else center
    q = params.map_points(physical_points(ref), c)
    coords = (q - np.asarray(vol.origin)) / np.asarray(vol.spacing)
    data = trilinear_sample(vol.data, coords)[0].reshape(ref.dims)
    mask = None if vol.mask is None else sample_nearest(vol.mask, coords, ref.dims)
    return Volume(data, ref.spacing, ref.origin, mask)


def downsample(vol: Volume, factor: int) -> Volume:
    """Block-mean downsampling; the mask keeps blocks that are at least half masked."""
    if factor == 1:
        return vol
    dims = [d // factor for d in vol.dims]
    if min(dims) < 2:
        raise InvalidArgumentError(f"volume {vol.dims} too small for pyramid factor {factor}")

    def blocks(a):
        a = a[: dims[0] * factor, : dims[1] * factor, : dims[2] * factor]
        return a.reshape(dims[0], factor, dims[1], factor, dims[2], factor).mean(axis=(1, 3, 5))

    sp = np.asarray(vol.spacing)
    origin = np.asarray(vol.origin) + (factor - 1) / 2.0 * sp
    mask = None if vol.mask is None else blocks(vol.mask.astype(np.float64)) >= 0.5
    return Volume(blocks(vol.data), tuple(sp * factor), tuple(origin), mask)


class _Objective:
    """Masked MSE between ``fixed`` and warped ``moving`` and its gradient."""

    def __init__(self, moving: Volume, fixed: Volume, center: np.ndarray, use_mask: bool):
        self.moving = moving
        self.points = physical_points(fixed)
        self.target = fixed.data.ravel()
        self.weight = fixed.mask.ravel() if (use_mask and fixed.mask is not None) else np.ones(self.target.size, bool)
        self.center = center
        self.m_origin = np.asarray(moving.origin)
        self.m_spacing = np.asarray(moving.spacing)

    def __call__(self, params: RigidParams, with_grad: bool = False):
        q = params.map_points(self.points, self.center)
        coords = (q - self.m_origin) / self.m_spacing
        inside = np.all((coords >= 0) & (coords <= np.asarray(self.moving.dims) - 1), axis=1)
        sel = inside & self.weight
        n = int(sel.sum())
        if n == 0:
            raise RegistrationError("fixed mask and warped moving support do not overlap")
        values, grad = trilinear_sample(self.moving.data, coords[sel], with_grad=with_grad)
        resid = values - self.target[sel]
        mse = float(resid @ resid) / n
        if not with_grad:
            return mse, None
        # chain rule: d(moving)/d(q) in mm, then dq/dt = I, dq/dangle_j = dR_j (p - c)
        gq = grad / self.m_spacing
        w = 2.0 * resid[:, None] * gq / n
        g_t = w.sum(axis=0)
        rel = self.points[sel] - self.center
        g_r = np.array([np.sum(w * (rel @ dr.T)) for dr in rotation_jacobian(params.rotation)])
        return mse, np.concatenate([g_r, g_t])


def _descend(obj: _Objective, params: RigidParams, cfg: RegistrationConfig, radius: float, factor: int):
    """Normalized gradient descent with step adaptation; only improving steps are accepted."""
    scale = np.array([radius] * 3 + [1.0] * 3)
    u = np.concatenate([params.rotation, params.translation]) * scale
    mse, grad = obj(params, with_grad=True)
    start = mse
    step = cfg.step_size * factor
    min_step = 1e-4 * factor
    it = 0
    for it in range(1, cfg.max_iters_per_level + 1):
        g = grad / scale
        gnorm = np.linalg.norm(g)
        if gnorm == 0 or step < min_step:
            break
        trial_u = u - step * g / gnorm
        trial = RigidParams(tuple(trial_u[:3] / radius), tuple(trial_u[3:]))
        trial_mse, trial_grad = obj(trial, with_grad=True)
        if trial_mse < mse:
            rel_change = (mse - trial_mse) / max(mse, 1e-300)
            u, params, mse, grad = trial_u, trial, trial_mse, trial_grad
            step = min(step * 1.25, 4.0 * cfg.step_size * factor)
            if rel_change < cfg.convergence_tol:
                break
        else:
            step *= 0.5
    return params, LevelRecord(factor, start, mse, it)


def register_rigid_with_report(moving: Volume, fixed: Volume, cfg: RegistrationConfig | None = None,
                               init: RigidParams | None = None) -> RegistrationReport:
    cfg = cfg or RegistrationConfig()
    if not np.allclose(moving.spacing, fixed.spacing, rtol=0, atol=1e-6):
        raise InvalidArgumentError(f"spacing mismatch: moving {moving.spacing} vs fixed {fixed.spacing}")
    center = physical_center(fixed)
    radius = float(np.mean((np.asarray(fixed.dims) - 1) * np.asarray(fixed.spacing)) / 2.0)
    params = init or RigidParams()

    full = _Objective(moving, fixed, center, cfg.use_mask)
    initial_mse, _ = full(params)
    levels = []
    for level in reversed(range(cfg.pyramid_levels)):
        factor = 2 ** level
        try:
            mv, fx = downsample(moving, factor), downsample(fixed, factor)
        except InvalidArgumentError:
            continue
        obj = full if factor == 1 else _Objective(mv, fx, center, cfg.use_mask)
        params, record = _descend(obj, params, cfg, radius, factor)
        levels.append(record)
    final_mse, _ = full(params)
    if final_mse > initial_mse:
        log.warning("registration increased MSE from %.6g to %.6g", initial_mse, final_mse)
    return RegistrationReport(params, initial_mse, final_mse, levels)


def register_rigid(moving: Volume, fixed: Volume, cfg: RegistrationConfig | None = None) -> RigidParams:
    """Rigid parameters aligning ``moving`` to ``fixed`` (see module docstring for the convention)."""
    return register_rigid_with_report(moving, fixed, cfg).params


def mean_displacement(a: RigidParams, b: RigidParams, ref: Volume, mask: np.ndarray | None = None) -> float:
    """Mean distance in voxels between the point maps of two transforms over ``ref``'s grid."""
    pts = physical_points(ref)
    if mask is not None:
        pts = pts[np.asarray(mask).ravel()]
    c = physical_center(ref)
    d = (a.map_points(pts, c) - b.map_points(pts, c)) / np.asarray(ref.spacing)
    return float(np.mean(np.linalg.norm(d, axis=1)))


def apply_rigid_to_session(sess, params: RigidParams, reference: Volume | None = None):
    """Warp every image of a session (pc, sd, ld, mask) with the same transform."""
    ref = reference
    center = physical_center(ref if ref is not None else sess.t1_pc)

    def warp(v):
        if v is None:
            return None
        if params.is_identity and ref is None:
            return warp_volume(v, params)
        return warp_volume(v, params, ref if ref is not None else v, center)

    pc = warp(sess.t1_pc)
    return replace(
        sess,
        t1_pc=pc,
        t1_sd=warp(sess.t1_sd),
        t1_ld=warp(sess.t1_ld),
        mask=pc.mask if pc.mask is not None else sess.mask,
        lesion_mask=None if sess.lesion_mask is None else warp(
            Volume(np.zeros(sess.lesion_mask.shape), sess.t1_pc.spacing, sess.t1_pc.origin, sess.lesion_mask)
        ).mask,
    )
