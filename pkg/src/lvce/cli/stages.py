"""Per-subject pipeline steps shared by the CLI subcommands.

Each function works on in-memory records; file layout lives in
:mod:`lvce.cli.layout`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from ..dosesim import DoseModel, dose_tag, simulate_low_dose
from ..errors import InvalidArgumentError, RegistrationError
from ..phantom import Session, SubjectRecord
from ..register import (
    RegistrationConfig,
    RigidParams,
    apply_rigid_to_session,
    register_rigid_with_report,
    warp_volume,
)
from ..volcore.ops import (
    apply_minmax,
    compute_crop_box,
    crop,
    fit_box,
    joint_range,
    pad_to_min_dims,
    resample_trilinear,
)
from ..volcore.volume import BoundingBox, Volume
from .config import PreprocessConfig

log = logging.getLogger(__name__)


@dataclass
class PreprocessResult:
    record: SubjectRecord
    crop_box: BoundingBox
    sd_to_pc: RigidParams
    ses02_to_ses01: RigidParams
    ranges: dict  # session name -> (min, max)
    registration_mse: dict  # name -> (initial, final)


def _resample_session(ses: Session, spacing) -> Session:
    pc = resample_trilinear(ses.t1_pc.replace(mask=ses.mask), spacing)
    sd = resample_trilinear(ses.t1_sd.replace(mask=ses.mask), spacing)
    lesion = None
    if ses.lesion_mask is not None:
        lesion = resample_trilinear(ses.t1_pc.replace(mask=ses.lesion_mask), spacing).mask
    return Session(pc, sd.replace(mask=pc.mask), pc.mask, lesion_mask=lesion)


def _crop_session(ses: Session, box: BoundingBox, dims) -> Session:
    def prep(v):
        return crop(pad_to_min_dims(v, dims), box)

    pc = prep(ses.t1_pc.replace(mask=ses.mask))
    sd = prep(ses.t1_sd.replace(mask=ses.mask))
    lesion = None
    if ses.lesion_mask is not None:
        lesion = prep(ses.t1_pc.replace(mask=ses.lesion_mask)).mask
    return Session(pc, sd, pc.mask, lesion_mask=lesion)


def _normalize_session(ses: Session) -> tuple[Session, tuple[float, float]]:
    lo, hi = joint_range([ses.t1_pc, ses.t1_sd])
    pc, sd = apply_minmax([ses.t1_pc, ses.t1_sd], lo, hi)
    return replace(ses, t1_pc=pc, t1_sd=sd), (lo, hi)


def preprocess_subject(rec: SubjectRecord, pcfg: PreprocessConfig, rcfg: RegistrationConfig) -> PreprocessResult:
    """Resample, crop with the ses-01 box, register, then normalize each session jointly.

    Raises :class:`RegistrationError` (with the subject ID) if either
    registration fails.
    """
    s1 = _resample_session(rec.ses01, pcfg.target_spacing)
    s2 = _resample_session(rec.ses02, pcfg.target_spacing)

    # one box from ses-01, reused verbatim on ses-02
    dims = pcfg.crop_dims
    padded = pad_to_min_dims(s1.t1_pc.replace(mask=s1.mask), dims)
    box = fit_box(compute_crop_box(padded.mask, pcfg.crop_margin), dims, padded.dims)
    s1 = _crop_session(s1, box, dims)
    s2 = _crop_session(s2, box, dims)

    mse = {}
    try:
        sd_to_pc = RigidParams()
        if pcfg.register_sd_to_pc:
            rep = register_rigid_with_report(s1.t1_sd, s1.t1_pc, rcfg)
            sd_to_pc = rep.params
            mse["ses01_sd_to_pc"] = (rep.initial_mse, rep.final_mse)
            if not sd_to_pc.is_identity:
                s1 = replace(s1, t1_sd=warp_volume(s1.t1_sd, sd_to_pc, s1.t1_pc).replace(mask=s1.mask))
        rep = register_rigid_with_report(s2.t1_pc, s1.t1_pc, rcfg)
        mse["ses02_to_ses01"] = (rep.initial_mse, rep.final_mse)
    except (RegistrationError, InvalidArgumentError) as exc:
        raise RegistrationError(f"{rec.subject_id}: {exc}") from exc
    s2 = apply_rigid_to_session(s2, rep.params, reference=s1.t1_pc)
    s2 = replace(s2, t1_pc=s2.t1_pc.replace(mask=s2.mask), t1_sd=s2.t1_sd.replace(mask=s2.mask))

    s1, r1 = _normalize_session(s1)
    s2, r2 = _normalize_session(s2)
    out = replace(rec, ses01=s1, ses02=s2)
    return PreprocessResult(out, box, sd_to_pc, rep.params, {"ses-01": r1, "ses-02": r2}, mse)


def dose_rng(seed: int, subject_index: int, dose: float) -> np.random.Generator:
    return np.random.default_rng([seed, subject_index, int(round(dose * 1000)), 7])


def simulate_subject(rec: SubjectRecord, dose: float, model: DoseModel, seed: int, subject_index: int) -> SubjectRecord:
    """Attach a simulated ses-02 low-dose image at ``dose``."""
    s2 = rec.ses02
    ld = simulate_low_dose(s2.t1_pc, s2.t1_sd, dose, model, dose_rng(seed, subject_index, dose))
    return replace(rec, ses02=replace(s2, t1_ld=ld.replace(mask=s2.mask)))


def subject_index(subject_id: str) -> int:
    return int(subject_id.split("-")[1]) - 1


def ld_filename(dose: float) -> str:
    return f"t1_ld_{dose_tag(dose)}.nii.gz"


def masked_region(rec: SubjectRecord, masked: bool):
    return rec.ses02.mask if masked else None


def volume_mae(a: Volume, b: Volume, mask) -> float:
    d = np.abs(a.data - b.data)
    return float(np.mean(d[mask] if mask is not None else d))
