"""Stochastic augmentation of (input stack, target) training pairs.

One spatial transform (per-axis flips, then a rotation/scale/translation
about the volume centre) is drawn per sample and applied to every input
channel and to the target. Noise and intensity offsets touch the inputs
only, since they model acquisition variation rather than anatomy.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import InvalidArgumentError
from ..volcore.ops import affine_sample_coords, sample_linear, sample_nearest
from ..volcore.volume import MultiChannelVolume, Volume


@dataclass(frozen=True)
class AugmentConfig:
    flip_prob_per_axis: float = 0.5
    rot_max: float = 0.05  # radians, per axis
    trans_max: float = 5.0  # voxels, per axis
    scale_range: float = 0.10  # scale drawn from [1 - r, 1 + r]
    noise_sigma: float = 0.01
    noise_prob: float = 0.3
    intensity_offset: float = 0.1  # offset drawn from [-o, o]
    offset_prob: float = 0.5

    def __post_init__(self):
        for name in ("flip_prob_per_axis", "noise_prob", "offset_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise InvalidArgumentError(f"{name} must be in [0, 1], got {p}")
        for name in ("rot_max", "trans_max", "scale_range", "noise_sigma", "intensity_offset"):
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f"{name} must be non-negative")
        if self.scale_range >= 1:
            raise InvalidArgumentError("scale_range must be < 1")

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "AugmentConfig":
        return cls(**d)


@dataclass(frozen=True)
class SpatialTransform:
    flips: tuple[bool, bool, bool] = (False, False, False)
    rotation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    scale: float = 1.0

    @property
    def is_identity(self) -> bool:
        return (not any(self.flips) and not any(self.rotation) and not any(self.translation)
                and self.scale == 1.0)

    def apply(self, vol: Volume) -> Volume:
        return apply_spatial(self, [vol])[0]


@dataclass(frozen=True)
class AugmentRecord:
    spatial: SpatialTransform
    noise_applied: bool
    offset: float


def draw_spatial(cfg: AugmentConfig, rng: np.random.Generator) -> SpatialTransform:
    flips = tuple(bool(f) for f in rng.random(3) < cfg.flip_prob_per_axis)
    rot = tuple(rng.uniform(-cfg.rot_max, cfg.rot_max, 3)) if cfg.rot_max > 0 else (0.0, 0.0, 0.0)
    trans = tuple(rng.uniform(-cfg.trans_max, cfg.trans_max, 3)) if cfg.trans_max > 0 else (0.0, 0.0, 0.0)
    scale = float(rng.uniform(1 - cfg.scale_range, 1 + cfg.scale_range)) if cfg.scale_range > 0 else 1.0
    return SpatialTransform(flips, tuple(float(a) for a in rot), tuple(float(t) for t in trans), scale)


def apply_spatial(tf: SpatialTransform, vols) -> list[Volume]:
    """Apply one spatial transform to volumes sharing a grid."""
    vols = list(vols)
    out = []
    for v in vols:
        data, mask = v.data, v.mask
        for axis, f in enumerate(tf.flips):
            if f:
                data = np.flip(data, axis)
                mask = None if mask is None else np.flip(mask, axis)
        out.append(v.replace(data=np.ascontiguousarray(data), mask=None if mask is None else mask.copy()))
    affine = any(tf.rotation) or any(tf.translation) or tf.scale != 1.0
    if not affine:
        return out
    dims = vols[0].dims
    coords = affine_sample_coords(dims, tf.rotation, tf.translation, tf.scale)
    return [
        v.replace(
            data=sample_linear(v.data, coords, dims),
            mask=None if v.mask is None else sample_nearest(v.mask, coords, dims),
        )
        for v in out
    ]


def augment_sample(inputs: MultiChannelVolume, target: Volume, cfg: AugmentConfig,
                   rng: np.random.Generator) -> tuple[MultiChannelVolume, Volume, AugmentRecord]:
    """Draw and apply one augmentation; returns ``(inputs', target', record)``."""
    tf = draw_spatial(cfg, rng)
    noise_applied = bool(rng.random() < cfg.noise_prob)
    offset = float(rng.uniform(-cfg.intensity_offset, cfg.intensity_offset)) if rng.random() < cfg.offset_prob else 0.0
    warped = apply_spatial(tf, list(inputs.channels) + [target])
    chans, new_target = warped[:-1], warped[-1]
    if noise_applied and cfg.noise_sigma > 0:
        chans = [c.replace(data=c.data + rng.normal(0.0, cfg.noise_sigma, c.dims)) for c in chans]
    if offset:
        chans = [c.replace(data=c.data + offset) for c in chans]
    return (MultiChannelVolume(tuple(chans), inputs.channel_order), new_target,
            AugmentRecord(tf, noise_applied, offset))
