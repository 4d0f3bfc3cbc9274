"""Volume, bounding box and multi-channel stack types."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..errors import InvalidArgumentError, ShapeError

LONGITUDINAL_ORDER = ("ses01_t1_pc", "ses01_t1_sd", "ses02_t1_pc", "ses02_t1_ld")
SINGLE_SESSION_ORDER = ("ses02_t1_pc", "ses02_t1_ld")

Triple = tuple[float, float, float]


def _triple(values, cast=float) -> tuple:
    t = tuple(cast(v) for v in values)
    if len(t) != 3:
        raise InvalidArgumentError(f"expected 3 components, got {len(t)}")
    return t


@dataclass(frozen=True, eq=False)
class Volume:
    """A 3D scalar image on an axis-aligned grid.

    ``data`` is indexed ``[x, y, z]``; the flat layout with x fastest is
    ``data.ravel(order="F")``. Voxel ``i`` has its centre at
    ``origin + i * spacing`` (mm).
    """

    data: np.ndarray
    spacing: Triple = (1.0, 1.0, 1.0)
    origin: Triple = (0.0, 0.0, 0.0)
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ShapeError(f"volume data must be a non-empty 3D array, got shape {data.shape}")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        spacing = _triple(self.spacing)
        if min(spacing) <= 0:
            raise InvalidArgumentError(f"spacing must be strictly positive, got {spacing}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", _triple(self.origin))
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=bool)
            if mask.shape != data.shape:
                raise ShapeError(f"mask shape {mask.shape} does not match data shape {data.shape}")
            object.__setattr__(self, "mask", mask)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.data.shape)

    @property
    def flat(self) -> np.ndarray:
        return self.data.ravel(order="F")

    def replace(self, **changes) -> "Volume":
        kwargs = dict(data=self.data, spacing=self.spacing, origin=self.origin, mask=self.mask)
        kwargs.update(changes)
        return Volume(**kwargs)

    def same_grid(self, other: "Volume") -> bool:
        return self.dims == other.dims and np.allclose(self.spacing, other.spacing, rtol=0, atol=1e-9)

    def equals(self, other: "Volume") -> bool:
        """Bitwise equality of data, mask and geometry."""
        if self.dims != other.dims or self.spacing != other.spacing or self.origin != other.origin:
            return False
        if not np.array_equal(self.data, other.data):
            return False
        if (self.mask is None) != (other.mask is None):
            return False
        return self.mask is None or np.array_equal(self.mask, other.mask)

    @classmethod
    def from_flat(cls, flat, dims, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0), mask=None):
        dims = _triple(dims, int)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != int(np.prod(dims)):
            raise ShapeError(f"data length {flat.size} != product of dims {dims}")
        data = flat.reshape(dims, order="F")
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if mask.size != flat.size:
                raise ShapeError("mask length does not match data length")
            mask = mask.reshape(dims, order="F")
        return cls(data, spacing, origin, mask)


@dataclass(frozen=True)
class BoundingBox:
    """Voxel box, ``min`` inclusive and ``max`` exclusive."""

    min: tuple[int, int, int]
    max: tuple[int, int, int]

    def __post_init__(self):
        lo, hi = _triple(self.min, int), _triple(self.max, int)
        if any(a >= b for a, b in zip(lo, hi)):
            raise InvalidArgumentError(f"bounding box min {lo} must be < max {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(b - a for a, b in zip(self.min, self.max))

    def slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(a, b) for a, b in zip(self.min, self.max))

    def fits(self, dims) -> bool:
        return all(a >= 0 and b <= d for a, b, d in zip(self.min, self.max, dims))

    def to_dict(self) -> dict:
        return {"min": list(self.min), "max": list(self.max)}

    @classmethod
    def from_dict(cls, d) -> "BoundingBox":
        return cls(tuple(d["min"]), tuple(d["max"]))


@dataclass(frozen=True)
class MultiChannelVolume:
    channels: tuple[Volume, ...]
    channel_order: tuple[str, ...] = field(default=LONGITUDINAL_ORDER)

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "channel_order", tuple(self.channel_order))

    def __len__(self) -> int:
        return len(self.channels)

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.channels[0].dims

    def channel(self, name: str) -> Volume:
        return self.channels[self.channel_order.index(name)]

    def as_array(self, dtype=np.float64) -> np.ndarray:
        """Channels stacked as ``(C, X, Y, Z)``."""
        return np.stack([v.data for v in self.channels]).astype(dtype, copy=False)

    def unstack(self) -> list[Volume]:
        return list(self.channels)


def stack_channels(vols: Sequence[Volume], order: Sequence[str] = LONGITUDINAL_ORDER) -> MultiChannelVolume:
    """Stack volumes in a declared semantic channel order.

    ``order`` must be one of the longitudinal (4-channel) or single-session
    (2-channel) orders and match ``len(vols)``.
    """
    order = tuple(order)
    if order not in (LONGITUDINAL_ORDER, SINGLE_SESSION_ORDER):
        raise InvalidArgumentError(f"unknown channel order {order}")
    if len(vols) != len(order):
        raise ShapeError(f"channel order expects {len(order)} volumes, got {len(vols)}")
    ref = vols[0]
    for name, v in zip(order, vols):
        if not v.same_grid(ref):
            raise ShapeError(
                f"channel {name} has dims {v.dims} spacing {v.spacing}, "
                f"expected dims {ref.dims} spacing {ref.spacing}"
            )
    return MultiChannelVolume(tuple(vols), order)
