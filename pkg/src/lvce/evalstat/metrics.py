"""Reconstruction metrics: MSE, PSNR and 3D SSIM, optionally within a mask."""

from __future__ import annotations

import math

import numpy as np

from .._accel import correlate_separable
from ..errors import InvalidArgumentError
from ..volcore.volume import Volume

SSIM_SIGMA = 1.5
SSIM_TAPS = 11
K1, K2 = 0.01, 0.03


def _arrays(pred, ref, mask):
    p = pred.data if isinstance(pred, Volume) else np.asarray(pred, dtype=np.float64)
    r = ref.data if isinstance(ref, Volume) else np.asarray(ref, dtype=np.float64)
    if p.shape != r.shape:
        raise InvalidArgumentError(f"shape mismatch: {p.shape} vs {r.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != p.shape:
            raise InvalidArgumentError(f"mask shape {mask.shape} does not match {p.shape}")
        if not mask.any():
            raise InvalidArgumentError("mask selects no voxels")
    return p.astype(np.float64, copy=False), r.astype(np.float64, copy=False), mask


def mse_metric(pred, ref, mask=None) -> float:
    p, r, mask = _arrays(pred, ref, mask)
    d = p - r
    if mask is not None:
        d = d[mask]
    return float(np.mean(d * d))


def psnr(pred, ref, mask=None, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the images agree exactly."""
    if not data_range > 0:
        raise InvalidArgumentError(f"data_range must be positive, got {data_range}")
    m = mse_metric(pred, ref, mask)
    if m == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range * data_range / m)


def gaussian_taps(sigma: float = SSIM_SIGMA, n: int = SSIM_TAPS) -> np.ndarray:
    r = n // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def ssim_map(pred, ref, mask=None, data_range: float = 1.0, sigma: float = SSIM_SIGMA,
             taps: int = SSIM_TAPS) -> np.ndarray:
    """Voxelwise SSIM with Gaussian-weighted local statistics.

    Local moments are weighted averages over the part of each window that
    lies inside the volume (and inside ``mask`` when given): the weights are
    renormalized to sum to one, so border windows are truncated rather than
    zero-padded and voxels outside the mask never contribute.
    """
    p, r, mask = _arrays(pred, ref, mask)
    if min(p.shape) < taps:
        raise InvalidArgumentError(f"volume {p.shape} smaller than the {taps}-voxel SSIM window")
    g = gaussian_taps(sigma, taps)
    w = np.ones_like(p) if mask is None else mask.astype(np.float64)
    norm = correlate_separable(w, g)
    safe = np.where(norm > 0, norm, 1.0)

    def local(a):
        return correlate_separable(w * a, g) / safe

    mu_p, mu_r = local(p), local(r)
    var_p = local(p * p) - mu_p * mu_p
    var_r = local(r * r) - mu_r * mu_r
    cov = local(p * r) - mu_p * mu_r
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    num = (2 * mu_p * mu_r + c1) * (2 * cov + c2)
    den = (mu_p * mu_p + mu_r * mu_r + c1) * (var_p + var_r + c2)
    return num / den


def ssim(pred, ref, mask=None, data_range: float = 1.0, sigma: float = SSIM_SIGMA,
         taps: int = SSIM_TAPS) -> float:
    """Mean SSIM over ``mask`` (whole volume when absent)."""
    smap = ssim_map(pred, ref, mask, data_range, sigma, taps)
    if mask is not None:
        smap = smap[np.asarray(mask, dtype=bool)]
    return float(np.mean(smap))
