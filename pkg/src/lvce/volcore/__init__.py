"""Volume type, NIfTI I/O and preprocessing operations."""

from .nifti import read_nifti, write_nifti
from .ops import (
    add_gaussian_noise,
    apply_affine,
    apply_minmax,
    compute_crop_box,
    crop,
    fit_box,
    flip,
    joint_minmax_normalize,
    joint_range,
    pad_to_min_dims,
    resample_trilinear,
    shift_intensity,
)
from .volume import (
    LONGITUDINAL_ORDER,
    SINGLE_SESSION_ORDER,
    BoundingBox,
    MultiChannelVolume,
    Volume,
    stack_channels,
)

__all__ = [
    "Volume", "BoundingBox", "MultiChannelVolume", "stack_channels",
    "LONGITUDINAL_ORDER", "SINGLE_SESSION_ORDER",
    "read_nifti", "write_nifti",
    "resample_trilinear", "compute_crop_box", "crop", "fit_box", "pad_to_min_dims",
    "joint_range", "apply_minmax", "joint_minmax_normalize",
    "flip", "apply_affine", "add_gaussian_noise", "shift_intensity",
]
