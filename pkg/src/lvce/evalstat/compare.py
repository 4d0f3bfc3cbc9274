"""Per-subject metric rows, normality-gated model comparison and reporting."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..errors import InvalidArgumentError
from ..volcore.sidecar import write_json
from .metrics import mse_metric, psnr, ssim
from .stats import paired_t_test, shapiro_wilk, wilcoxon_signed_rank

MODEL_TAGS = ("t1_ld", "single_session", "longitudinal")
MODEL_LABELS = {"t1_ld": "T1-LD", "single_session": "Single Session", "longitudinal": "Longitudinal"}
METRICS = ("mse", "psnr", "ssim")
HIGHER_IS_BETTER = {"mse": False, "psnr": True, "ssim": True}
CSV_FIELDS = ("subject", "model", "dose", "mse", "psnr", "ssim")


@dataclass(frozen=True)
class MetricsRow:
    subject_id: str
    model_tag: str
    dose: float
    mse: float
    psnr: float
    ssim: float

    def __post_init__(self):
        if self.mse < 0:
            raise InvalidArgumentError("mse must be non-negative")
        if self.ssim > 1 + 1e-12:
            raise InvalidArgumentError("ssim must not exceed 1")

    def metric(self, name: str) -> float:
        if name not in METRICS:
            raise InvalidArgumentError(f"unknown metric {name!r}")
        return getattr(self, name)


def metrics_row(subject_id: str, model_tag: str, dose: float, pred, ref, mask=None) -> MetricsRow:
    return MetricsRow(subject_id, model_tag, float(dose), mse_metric(pred, ref, mask),
                      psnr(pred, ref, mask), ssim(pred, ref, mask))


def _fmt(x: float) -> str:
    return repr(float(x))


def write_metrics_csv(rows: Iterable[MetricsRow], path) -> Path:
    """Rows sorted by (dose, model order, subject) for byte-stable output."""
    order = {m: i for i, m in enumerate(MODEL_TAGS)}
    rows = sorted(rows, key=lambda r: (r.dose, order.get(r.model_tag, 99), r.model_tag, r.subject_id))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in rows:
            w.writerow([r.subject_id, r.model_tag, _fmt(r.dose), _fmt(r.mse), _fmt(r.psnr), _fmt(r.ssim)])
    return path


def read_metrics_csv(path) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        return [
            MetricsRow(r["subject"], r["model"], float(r["dose"]), float(r["mse"]), float(r["psnr"]), float(r["ssim"]))
            for r in csv.DictReader(fh)
        ]


@dataclass(frozen=True)
class ComparisonReport:
    metric: str
    model_a: str
    model_b: str
    n: int
    mean_a: float
    sd_a: float
    mean_b: float
    sd_b: float
    normality_p: float | None
    test: str  # "wilcoxon", "paired_t" or "none"
    statistic: float | None
    p_value: float
    better: str  # model tag with the better mean, or "none"
    alpha: float = 0.05
    note: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, float) and not math.isfinite(v):
                d[k] = None if math.isnan(v) else ("inf" if v > 0 else "-inf")
        return d


def _paired(rows_a: Sequence[MetricsRow], rows_b: Sequence[MetricsRow], metric: str):
    a = {r.subject_id: r.metric(metric) for r in rows_a}
    b = {r.subject_id: r.metric(metric) for r in rows_b}
    missing_b = sorted(set(a) - set(b))
    missing_a = sorted(set(b) - set(a))
    if missing_a or missing_b:
        raise InvalidArgumentError(
            f"subject sets differ: missing from A {missing_a}, missing from B {missing_b}"
        )
    ids = sorted(a)
    return ids, np.array([a[i] for i in ids]), np.array([b[i] for i in ids])


def compare_models(rows_a: Sequence[MetricsRow], rows_b: Sequence[MetricsRow], metric: str,
                   alpha: float = 0.05) -> ComparisonReport:
    """Shapiro-Wilk on paired differences gates Wilcoxon (p < alpha) versus paired t."""
    if metric not in METRICS:
        raise InvalidArgumentError(f"unknown metric {metric!r}")
    if not rows_a or not rows_b:
        raise InvalidArgumentError("both row sets must be non-empty")
    tag_a, tag_b = rows_a[0].model_tag, rows_b[0].model_tag
    ids, a, b = _paired(rows_a, rows_b, metric)
    n = len(ids)
    d = a - b

    def sd(v):
        return float(np.std(v, ddof=1)) if v.size > 1 else 0.0

    mean_a, mean_b = float(np.mean(a)), float(np.mean(b))
    if mean_a == mean_b:
        better = "none"
    elif (mean_a > mean_b) == HIGHER_IS_BETTER[metric]:
        better = tag_a
    else:
        better = tag_b
    common = dict(metric=metric, model_a=tag_a, model_b=tag_b, n=n, mean_a=mean_a, sd_a=sd(a),
                  mean_b=mean_b, sd_b=sd(b), alpha=alpha)

    if not np.any(d != 0):
        return ComparisonReport(**common, normality_p=None, test="none", statistic=None, p_value=1.0,
                                better="none", note="no difference: all paired differences are zero")
    try:
        normality_p = shapiro_wilk(d).p
    except InvalidArgumentError as exc:
        normality_p = None
        note = f"normality not testable ({exc}); using wilcoxon"
    else:
        note = ""
    if normality_p is None or normality_p < alpha:
        w = wilcoxon_signed_rank(a, b)
        return ComparisonReport(**common, normality_p=normality_p, test="wilcoxon", statistic=w.W,
                                p_value=w.p, better=better, note=note or f"wilcoxon {w.method}")
    t = paired_t_test(a, b)
    return ComparisonReport(**common, normality_p=normality_p, test="paired_t", statistic=t.t,
                            p_value=t.p, better=better, note=f"df={t.df}")


def summarize(rows: Sequence[MetricsRow], metric: str) -> tuple[float, float]:
    v = np.array([r.metric(metric) for r in rows], dtype=np.float64)
    return float(np.mean(v)), float(np.std(v, ddof=1)) if v.size > 1 else 0.0


def format_cell(mean: float, sd: float, digits: int = 4) -> str:
    return f"{mean:.{digits}f} ± {sd:.{digits}f}"


def results_table(rows: Sequence[MetricsRow], dose: float | None = None) -> str:
    """Aligned text table: one line per model (T1-LD, Single Session, Longitudinal).

    MSE is shown scaled by 100 (units of 1e-2).
    """
    if dose is not None:
        rows = [r for r in rows if abs(r.dose - dose) < 1e-12]
    header = ["Model", "MSE (x10^-2)", "PSNR (dB)", "SSIM"]
    lines = []
    for tag in MODEL_TAGS:
        sel = [r for r in rows if r.model_tag == tag]
        if not sel:
            continue
        m_mse, s_mse = summarize(sel, "mse")
        m_psnr, s_psnr = summarize(sel, "psnr")
        m_ssim, s_ssim = summarize(sel, "ssim")
        lines.append([MODEL_LABELS[tag], format_cell(100 * m_mse, 100 * s_mse),
                      format_cell(m_psnr, s_psnr, 2), format_cell(m_ssim, s_ssim)])
    widths = [max(len(r[i]) for r in [header] + lines) for i in range(len(header))]

    def render(r):
        return "  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()

    out = [render(header), "  ".join("-" * w for w in widths)]
    out += [render(r) for r in lines]
    return "\n".join(out) + "\n"


def write_comparison_json(reports: Sequence[ComparisonReport], path) -> Path:
    return write_json(path, {"comparisons": [r.to_dict() for r in reports]})
