"""Synthetic longitudinal cohorts: two sessions per subject with evolving lesions.

Every image is evaluated analytically on the voxel grid, so the
inter-session rigid misalignment is exact rather than a resampling of a
reference image. Intensities are arbitrary units in roughly [0, 1.2].
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError
from .register import RigidParams, physical_center, physical_points
from .volcore.nifti import read_nifti, write_nifti
from .volcore.volume import Volume

EVOLUTIONS = ("growth", "shrinkage", "stable")
RADIUS_FACTOR = {"growth": 1.3, "shrinkage": 0.7, "stable": 1.0}


@dataclass(frozen=True)
class PhantomConfig:
    dims: tuple[int, int, int] = (36, 36, 36)
    n_subjects: int = 20
    lesion_evolution_mix: tuple[float, float, float] = (0.4, 0.3, 0.3)
    enhancement_gain: float = 0.5
    misalignment_max_rotation: float = 0.05
    misalignment_max_translation: float = 4.0
    noise_sigma: float = 0.01
    seed: int = 2025
    ring_fraction: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "lesion_evolution_mix", tuple(float(p) for p in self.lesion_evolution_mix))
        if len(self.dims) != 3 or min(self.dims) < 16:
            raise InvalidArgumentError(f"phantom dims must be >= 16 per axis, got {self.dims}")
        if self.n_subjects < 1:
            raise InvalidArgumentError(f"n_subjects must be positive, got {self.n_subjects}")
        mix = self.lesion_evolution_mix
        if len(mix) != 3 or min(mix) < 0 or abs(sum(mix) - 1.0) > 1e-9:
            raise InvalidArgumentError(f"evolution mix must be 3 probabilities summing to 1, got {mix}")
        if not 0.0 <= self.enhancement_gain <= 1.0:
            raise InvalidArgumentError(f"enhancement_gain must lie in [0, 1], got {self.enhancement_gain}")
        if self.noise_sigma < 0 or self.misalignment_max_rotation < 0 or self.misalignment_max_translation < 0:
            raise InvalidArgumentError("noise and misalignment bounds must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "PhantomConfig":
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Session:
    t1_pc: Volume
    t1_sd: Volume
    mask: np.ndarray
    t1_ld: Optional[Volume] = None
    lesion_mask: Optional[np.ndarray] = None
    enhancement: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class SubjectRecord:
    subject_id: str
    ses01: Session
    ses02: Session
    evolution_label: str
    true_misalignment: RigidParams
    lesions: list = field(default_factory=list)


@dataclass(frozen=True)
class _Lesion:
    center: np.ndarray  # voxel offset from volume centre
    axes: np.ndarray  # semi-axes in voxels
    amplitude: float
    ring: bool


def subject_rng(seed: int, subject_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), int(subject_index)]))


def _soft_inside(r: np.ndarray, width: float) -> np.ndarray:
    """Smooth indicator of ``r <= 1`` for a normalized ellipsoidal radius."""
    return 0.5 * (1.0 - np.tanh((r - 1.0) / width))


def _ellipsoid_radius(pts, center, axes):
    return np.sqrt(np.sum(((pts - center) / axes) ** 2, axis=1))


class _Anatomy:
    """Continuous subject anatomy, sampled at arbitrary voxel-space points."""

    def __init__(self, cfg: PhantomConfig, rng: np.random.Generator):
        dims = np.asarray(cfg.dims, dtype=np.float64)
        self.brain_axes = dims * rng.uniform(0.36, 0.42, 3)
        self.brain_center = rng.uniform(-1.0, 1.0, 3)
        self.vent_axes = self.brain_axes * rng.uniform(0.18, 0.26, 3)
        self.tissue = rng.uniform(0.5, 0.6)
        # low-frequency texture: a few plane waves with 8-20 voxel wavelength
        self.waves = [
            (rng.normal(size=3) / 1.0, rng.uniform(8.0, 20.0), rng.uniform(0, 2 * np.pi), rng.uniform(0.02, 0.05))
            for _ in range(4)
        ]
        self.lesions = self._draw_lesions(cfg, rng)

    def _draw_lesions(self, cfg, rng):
        lesions = []
        for _ in range(int(rng.integers(1, 4))):
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            offset = direction * rng.uniform(0.25, 0.55) * self.brain_axes
            # keep lesions out of the ventricles
            if np.sum((offset / self.vent_axes) ** 2) < 2.0:
                offset = offset + 1.5 * self.vent_axes * direction
            lesions.append(
                _Lesion(
                    center=self.brain_center + offset,
                    axes=rng.uniform(2.5, 5.0, 3),
                    amplitude=float(rng.uniform(0.5, 1.0)),
                    ring=bool(rng.random() < cfg.ring_fraction),
                )
            )
        return lesions

    def evaluate(self, pts: np.ndarray, radius_factor: float):
        """Pre-contrast intensity, enhancement map, brain mask and lesion mask at ``pts``."""
        r_brain = _ellipsoid_radius(pts, self.brain_center, self.brain_axes)
        brain = _soft_inside(r_brain, 0.05)
        mask = r_brain <= 1.0
        texture = np.zeros(len(pts))
        for k, wavelength, phase, amp in self.waves:
            kn = k / np.linalg.norm(k) * (2 * np.pi / wavelength)
            texture += amp * np.cos(pts @ kn + phase)
        vent = _soft_inside(_ellipsoid_radius(pts, self.brain_center, self.vent_axes), 0.15)
        pc = self.tissue + texture - 0.3 * vent
        enh = np.zeros(len(pts))
        lesion_mask = np.zeros(len(pts), bool)
        for les in self.lesions:
            axes = les.axes * radius_factor
            r = _ellipsoid_radius(pts, les.center, axes)
            inside = _soft_inside(r, 0.2)
            lesion_mask |= r <= 1.0
            pc -= 0.12 * inside
            if les.ring:
                core = _soft_inside(r / 0.55, 0.2)
                pc -= 0.08 * core
                enh += les.amplitude * (inside - core)
            else:
                enh += les.amplitude * inside
        pc = np.clip(pc, 0.0, None) * brain
        enh = np.clip(enh, 0.0, None) * brain * mask
        return pc, enh, mask, lesion_mask & mask


def _session(anatomy, pts, dims, cfg, radius_factor, rng, spacing, origin) -> Session:
    pc, enh, mask, lesion = anatomy.evaluate(pts, radius_factor)
    shape = tuple(dims)
    pc, enh, mask, lesion = (a.reshape(shape) for a in (pc, enh, mask, lesion))
    sd = pc + cfg.enhancement_gain * enh
    if cfg.noise_sigma > 0:
        pc = pc + mask * rng.normal(0.0, cfg.noise_sigma, shape)
        sd = sd + mask * rng.normal(0.0, cfg.noise_sigma, shape)
    return Session(
        t1_pc=Volume(pc, spacing, origin, mask),
        t1_sd=Volume(sd, spacing, origin, mask),
        mask=mask,
        lesion_mask=lesion,
        enhancement=enh,
    )


def generate_subject(cfg: PhantomConfig, subject_index: int) -> SubjectRecord:
    """Deterministic subject for ``(cfg.seed, subject_index)``."""
    if not 0 <= subject_index < cfg.n_subjects:
        raise InvalidArgumentError(f"subject_index {subject_index} outside [0, {cfg.n_subjects})")
    rng = subject_rng(cfg.seed, subject_index)
    anatomy = _Anatomy(cfg, rng)
    label = EVOLUTIONS[int(rng.choice(3, p=cfg.lesion_evolution_mix))]
    misalign = RigidParams(
        tuple(rng.uniform(-1, 1, 3) * cfg.misalignment_max_rotation),
        tuple(rng.uniform(-1, 1, 3) * cfg.misalignment_max_translation),
    )

    spacing, origin = (1.0, 1.0, 1.0), (0.0, 0.0, 0.0)
    grid = Volume(np.zeros(cfg.dims), spacing, origin)
    pts = physical_points(grid)
    center = physical_center(grid)
    rel = pts - center
    ses01 = _session(anatomy, rel, cfg.dims, cfg, 1.0, rng, spacing, origin)
    moved = misalign.map_points(pts, center) - center
    ses02 = _session(anatomy, moved, cfg.dims, cfg, RADIUS_FACTOR[label], rng, spacing, origin)
    lesions = [
        {"center": les.center.tolist(), "axes": les.axes.tolist(), "amplitude": les.amplitude, "ring": les.ring}
        for les in anatomy.lesions
    ]
    return SubjectRecord(f"sub-{subject_index + 1:03d}", ses01, ses02, label, misalign, lesions)


def generate_cohort(cfg: PhantomConfig) -> list[SubjectRecord]:
    return [generate_subject(cfg, i) for i in range(cfg.n_subjects)]


def split_sizes(n: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder rounding of ``n * fractions`` so sizes sum to ``n``."""
    raw = [n * f for f in fractions]
    sizes = [math.floor(r + 1e-9) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def split_cohort(records: Sequence, fractions=(0.7, 0.1, 0.2), seed: int = 0,
                 optional: Sequence[str] = ()) -> dict[str, list]:
    """Seeded disjoint train/val/test partition.

    A split that rounds to zero members is an error unless named in ``optional``.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise InvalidArgumentError(f"fractions must be 3 non-negative values summing to 1, got {fractions}")
    records = list(records)
    if not records:
        raise InvalidArgumentError("cannot split an empty cohort")
    sizes = split_sizes(len(records), fractions)
    names = ("train", "val", "test")
    for name, size in zip(names, sizes):
        if size == 0 and name not in optional:
            raise InvalidArgumentError(f"split {name!r} would be empty for {len(records)} subjects")
    perm = np.random.default_rng(seed).permutation(len(records))
    out, start = {}, 0
    for name, size in zip(names, sizes):
        out[name] = [records[i] for i in perm[start : start + size]]
        start += size
    return out


# ---------------------------------------------------------------------------
# on-disk cohort: sub-XXX/ses-0Y/{t1_pc,t1_sd,mask}.nii.gz + cohort.json
# ---------------------------------------------------------------------------

FREE_PARAMETER_NOTE = (
    "lesion sizes, enhancement amplitudes, tissue texture and misalignment bounds are free "
    "phantom choices, not statistics of any clinical cohort"
)


def write_cohort(records: Sequence[SubjectRecord], root, cfg: PhantomConfig,
                 splits: dict[str, list] | None = None) -> Path:
    root = Path(root)
    split_of = {}
    for name, members in (splits or {}).items():
        for rec in members:
            split_of[rec.subject_id] = name
    entries = []
    for rec in records:
        for ses_name, ses in (("ses-01", rec.ses01), ("ses-02", rec.ses02)):
            d = root / rec.subject_id / ses_name
            write_nifti(ses.t1_pc, d / "t1_pc.nii.gz")
            write_nifti(ses.t1_sd, d / "t1_sd.nii.gz")
            write_nifti(ses.t1_pc.replace(mask=ses.mask), d / "mask.nii.gz", mask=True)
            if ses.lesion_mask is not None:
                write_nifti(ses.t1_pc.replace(mask=ses.lesion_mask), d / "lesion_mask.nii.gz", mask=True)
        entries.append({
            "subject_id": rec.subject_id,
            "evolution_label": rec.evolution_label,
            "true_misalignment": rec.true_misalignment.to_dict(),
            "split": split_of.get(rec.subject_id),
            "lesions": rec.lesions,
        })
    manifest = {
        "phantom_config": cfg.to_dict(),
        "free_parameters": FREE_PARAMETER_NOTE,
        "subjects": entries,
    }
    (root / "cohort.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return root


def read_session(directory) -> Session:
    d = Path(directory)
    pc = read_nifti(d / "t1_pc.nii.gz")
    sd = read_nifti(d / "t1_sd.nii.gz")
    mask = read_nifti(d / "mask.nii.gz", as_mask=True).mask
    lesion = d / "lesion_mask.nii.gz"
    lesion_mask = read_nifti(lesion, as_mask=True).mask if lesion.exists() else None
    return Session(pc.replace(mask=mask), sd.replace(mask=mask), mask, lesion_mask=lesion_mask)


def read_cohort(root) -> tuple[dict, list[SubjectRecord]]:
    root = Path(root)
    manifest = json.loads((root / "cohort.json").read_text())
    records = []
    for e in manifest["subjects"]:
        sid = e["subject_id"]
        records.append(SubjectRecord(
            sid,
            read_session(root / sid / "ses-01"),
            read_session(root / sid / "ses-02"),
            e["evolution_label"],
            RigidParams.from_dict(e["true_misalignment"]),
            e.get("lesions", []),
        ))
    return manifest, records
