"""Rotation matrices and grid coordinate helpers shared by warping code."""

from __future__ import annotations

import numpy as np


def _axis_rotations(angles):
    ax, ay, az = (float(a) for a in angles)
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    drx = np.array([[0, 0, 0], [0, -sx, -cx], [0, cx, -sx]])
    dry = np.array([[-sy, 0, cy], [0, 0, 0], [-cy, 0, -sy]])
    drz = np.array([[-sz, -cz, 0], [cz, -sz, 0], [0, 0, 0]])
    return (rx, ry, rz), (drx, dry, drz)


def rotation_matrix(angles) -> np.ndarray:
    """Rotation about x, then y, then z: ``Rz @ Ry @ Rx``."""
    (rx, ry, rz), _ = _axis_rotations(angles)
    return rz @ ry @ rx


def rotation_jacobian(angles) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Partial derivatives of :func:`rotation_matrix` w.r.t. each angle."""
    (rx, ry, rz), (drx, dry, drz) = _axis_rotations(angles)
    return rz @ ry @ drx, rz @ dry @ rx, drz @ ry @ rx


def euler_from_matrix(r: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rotation_matrix` for the principal branch."""
    ay = -np.arcsin(np.clip(r[2, 0], -1.0, 1.0))
    ax = np.arctan2(r[2, 1], r[2, 2])
    az = np.arctan2(r[1, 0], r[0, 0])
    return np.array([ax, ay, az])


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=np.float64) + np.pi, 2 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def grid_indices(dims) -> np.ndarray:
    """All voxel indices of a grid as an ``(N, 3)`` float array, z fastest."""
    ix, iy, iz = np.meshgrid(*(np.arange(d, dtype=np.float64) for d in dims), indexing="ij")
    return np.stack([ix.ravel(), iy.ravel(), iz.ravel()], axis=1)


def volume_center(dims) -> np.ndarray:
    return (np.asarray(dims, dtype=np.float64) - 1.0) / 2.0
