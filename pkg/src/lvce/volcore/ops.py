"""Preprocessing and augmentation operations on :class:`Volume`.

All functions return new volumes and never modify their inputs.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .._accel import trilinear_sample
from ..errors import DegenerateRangeError, EmptyRegionError, InvalidArgumentError
from .geometry import grid_indices, rotation_matrix, volume_center
from .volume import BoundingBox, Volume


def sample_linear(data: np.ndarray, coords: np.ndarray, out_dims) -> np.ndarray:
    values, _ = trilinear_sample(data, coords)
    return values.reshape(out_dims)


def sample_nearest(mask: np.ndarray, coords: np.ndarray, out_dims) -> np.ndarray:
    idx = np.floor(coords + 0.5).astype(np.int64)
    dims = np.array(mask.shape)
    ok = np.all((idx >= 0) & (idx < dims), axis=1)
    out = np.zeros(len(coords), dtype=bool)
    i = idx[ok]
    out[ok] = mask[i[:, 0], i[:, 1], i[:, 2]]
    return out.reshape(out_dims)


def resample_trilinear(vol: Volume, target_spacing) -> Volume:
    """Resample onto a grid with ``target_spacing``, keeping the first voxel centre.

    Output dims are ``ceil(dims * spacing / target_spacing)``; samples past the
    last input voxel centre are 0. The mask is resampled nearest-neighbour.
    """
    target = np.asarray(target_spacing, dtype=np.float64)
    if target.shape != (3,) or np.any(target <= 0):
        raise InvalidArgumentError(f"target spacing must be three positive values, got {target_spacing}")
    spacing = np.asarray(vol.spacing)
    if np.array_equal(target, spacing):
        return vol.replace(data=vol.data.copy(), mask=None if vol.mask is None else vol.mask.copy())

    extent = np.asarray(vol.dims) * spacing / target
    out_dims = tuple(int(np.ceil(e - 1e-9)) for e in extent)
    coords = grid_indices(out_dims) * (target / spacing)
    data = sample_linear(vol.data, coords, out_dims)
    mask = None if vol.mask is None else sample_nearest(vol.mask, coords, out_dims)
    return Volume(data, tuple(target), vol.origin, mask)


def compute_crop_box(mask, margin: int = 0) -> BoundingBox:
    """Tight box around true voxels, dilated by ``margin`` and clamped to bounds."""
    if isinstance(mask, Volume):
        if mask.mask is None:
            raise InvalidArgumentError("volume carries no mask")
        mask = mask.mask
    mask = np.asarray(mask, dtype=bool)
    if margin < 0:
        raise InvalidArgumentError(f"margin must be non-negative, got {margin}")
    idx = np.argwhere(mask)
    if idx.size == 0:
        raise EmptyRegionError("mask contains no true voxels")
    lo = np.maximum(idx.min(axis=0) - margin, 0)
    hi = np.minimum(idx.max(axis=0) + 1 + margin, mask.shape)
    return BoundingBox(tuple(lo), tuple(hi))


def fit_box(box: BoundingBox, target_dims, vol_dims) -> BoundingBox:
    """Grow or shrink ``box`` about its centre to ``target_dims``, kept inside the volume.

    Requires ``target_dims <= vol_dims``; pad the volume first otherwise.
    """
    lo = []
    for a, b, t, d in zip(box.min, box.max, target_dims, vol_dims):
        if t > d:
            raise InvalidArgumentError(f"target extent {t} exceeds volume extent {d}")
        start = (a + b - t) // 2
        lo.append(int(min(max(start, 0), d - t)))
    return BoundingBox(tuple(lo), tuple(a + t for a, t in zip(lo, target_dims)))


def pad_to_min_dims(vol: Volume, min_dims) -> Volume:
    """Zero-pad symmetrically so every axis is at least ``min_dims``."""
    pads = []
    for d, t in zip(vol.dims, min_dims):
        extra = max(0, int(t) - d)
        pads.append((extra // 2, extra - extra // 2))
    if not any(p for pair in pads for p in pair):
        return vol
    data = np.pad(vol.data, pads)
    mask = None if vol.mask is None else np.pad(vol.mask, pads)
    origin = tuple(o - p[0] * s for o, p, s in zip(vol.origin, pads, vol.spacing))
    return Volume(data, vol.spacing, origin, mask)


def crop(vol: Volume, box: BoundingBox) -> Volume:
    if not box.fits(vol.dims):
        raise InvalidArgumentError(f"box {box.min}..{box.max} outside volume dims {vol.dims}")
    sl = box.slices()
    origin = tuple(o + m * s for o, m, s in zip(vol.origin, box.min, vol.spacing))
    mask = None if vol.mask is None else vol.mask[sl].copy()
    return Volume(vol.data[sl].copy(), vol.spacing, origin, mask)


def joint_range(vols: Sequence[Volume]) -> tuple[float, float]:
    if not vols:
        raise InvalidArgumentError("no volumes to normalize")
    lo = min(float(v.data.min()) for v in vols)
    hi = max(float(v.data.max()) for v in vols)
    return lo, hi


def apply_minmax(vols: Sequence[Volume], lo: float, hi: float) -> list[Volume]:
    if not hi > lo:
        raise DegenerateRangeError(f"degenerate intensity range [{lo}, {hi}]")
    scale = hi - lo
    return [v.replace(data=(v.data - lo) / scale) for v in vols]


def joint_minmax_normalize(vols: Sequence[Volume]) -> list[Volume]:
    """Min-max normalize with one min/max taken over all volumes jointly."""
    lo, hi = joint_range(vols)
    return apply_minmax(vols, lo, hi)


def flip(vol: Volume, axis: int) -> Volume:
    if axis not in (0, 1, 2):
        raise InvalidArgumentError(f"axis must be 0, 1 or 2, got {axis!r}")
    mask = None if vol.mask is None else np.flip(vol.mask, axis).copy()
    return vol.replace(data=np.flip(vol.data, axis).copy(), mask=mask)


def affine_sample_coords(dims, rotation, translation, scale) -> np.ndarray:
    """Source voxel coordinates for every output voxel of an affine warp.

    Content at source voxel ``q`` moves to ``c + scale * R (q - c) + t`` where
    ``c`` is the volume centre; this returns the inverse map evaluated on the
    output grid.
    """
    if scale <= 0:
        raise InvalidArgumentError(f"scale must be positive, got {scale}")
    r = rotation_matrix(rotation)
    c = volume_center(dims)
    p = grid_indices(dims)
    return c + ((p - c - np.asarray(translation, dtype=np.float64)) @ r) / scale


def apply_affine(vol: Volume, rotation=(0.0, 0.0, 0.0), translation=(0.0, 0.0, 0.0), scale: float = 1.0) -> Volume:
    """Rotate (radians), scale and translate (voxels) about the volume centre.

    Trilinear for intensities, nearest-neighbour for the mask, zero fill.
    """
    coords = affine_sample_coords(vol.dims, rotation, translation, scale)
    data = sample_linear(vol.data, coords, vol.dims)
    mask = None if vol.mask is None else sample_nearest(vol.mask, coords, vol.dims)
    return vol.replace(data=data, mask=mask)


def add_gaussian_noise(vol: Volume, sigma: float, rng: np.random.Generator) -> Volume:
    if sigma < 0:
        raise InvalidArgumentError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return vol.replace(data=vol.data.copy())
    return vol.replace(data=vol.data + rng.normal(0.0, sigma, size=vol.dims))


def shift_intensity(vol: Volume, offset: float) -> Volume:
    return vol.replace(data=vol.data + offset)
