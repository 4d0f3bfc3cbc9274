"""File-level study stages: each reads its inputs from disk, writes its
outputs, and records both in the run manifest."""

from __future__ import annotations

import csv
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..dosesim import dose_tag
from ..errors import DependencyError, InvalidArgumentError, RegistrationError
from ..evalstat import (
    METRICS,
    MODEL_LABELS,
    MODEL_TAGS,
    compare_models,
    metrics_row,
    read_metrics_csv,
    results_table,
    slope_regression,
    summarize,
    write_comparison_json,
    write_metrics_csv,
)
from ..neuralvol import load_checkpoint
from ..phantom import (
    Session,
    SubjectRecord,
    generate_cohort,
    read_cohort,
    read_session,
    split_cohort,
    write_cohort,
)
from ..register import RigidParams
from ..trainer import MODES, make_sample, predict, train, write_training_outputs
from ..volcore.nifti import read_nifti, write_nifti
from ..volcore.sidecar import read_json, write_crop_sidecar, write_json, write_range_sidecar
from .config import StudyConfig
from .figures import box_stats, boxplot_svg, lineplot_svg, slice_panel, write_pgm
from .manifest import RunManifest
from .stages import ld_filename, preprocess_subject, simulate_subject, subject_index

log = logging.getLogger(__name__)

SWEEP_FIELDS = ("model", "dose", "metric", "mean", "sd", "n")


class Study:
    """Paths and stage runners for one output directory."""

    def __init__(self, cfg: StudyConfig, root=None):
        self.cfg = cfg
        self.root = Path(root if root is not None else cfg.output_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest.load(self.root, cfg.digest())

    # -- layout ------------------------------------------------------------

    @property
    def raw_dir(self) -> Path:
        return self.root / "cohort"

    @property
    def prep_dir(self) -> Path:
        return self.root / "preprocessed"

    def model_dir(self, mode: str, dose: float) -> Path:
        return self.root / "models" / dose_tag(dose) / mode

    def eval_dir(self, dose: float) -> Path:
        return self.root / "eval" / dose_tag(dose)

    @property
    def sweep_dir(self) -> Path:
        return self.root / "sweep"

    @property
    def report_dir(self) -> Path:
        return self.root / "report"

    def _require(self, stage: str) -> list[Path]:
        if stage not in self.manifest.stages:
            raise DependencyError(f"stage {stage!r} has not been run (required first)")
        outs = self.manifest.outputs_of(stage)
        missing = [p for p in outs if not p.exists()]
        if missing:
            raise DependencyError(f"stage {stage!r} output missing: {self.manifest.rel(missing[0])}")
        return outs

    # -- generate ----------------------------------------------------------

    def generate(self) -> bool:
        cfg = self.cfg

        def work():
            records = generate_cohort(cfg.phantom)
            splits = split_cohort(records, cfg.split_fractions, cfg.seed)
            write_cohort(records, self.raw_dir, cfg.phantom, splits)
            outs = sorted(p for p in self.raw_dir.rglob("*") if p.is_file())
            return outs, {"n_subjects": len(records), "splits": {k: len(v) for k, v in splits.items()}}

        params = {"phantom": cfg.phantom.to_dict(), "split": cfg.split_fractions}
        return self.manifest.run("generate", params, [], work)[1]

    def splits(self) -> dict[str, list[str]]:
        doc = read_json(self.raw_dir / "cohort.json")
        out = {"train": [], "val": [], "test": []}
        for e in doc["subjects"]:
            if e.get("split") in out:
                out[e["split"]].append(e["subject_id"])
        return out

    # -- preprocess --------------------------------------------------------

    def preprocess(self) -> bool:
        cfg = self.cfg
        inputs = self._require("generate")

        def work():
            _, records = read_cohort(self.raw_dir)
            outs, kept, skipped, reg = [], [], {}, {}
            for rec in records:
                try:
                    res = preprocess_subject(rec, cfg.preprocess, cfg.registration)
                except RegistrationError as exc:
                    log.warning("skipping %s: %s", rec.subject_id, exc)
                    skipped[rec.subject_id] = str(exc)
                    continue
                kept.append(rec.subject_id)
                reg[rec.subject_id] = {k: list(v) for k, v in res.registration_mse.items()}
                base = self.prep_dir / rec.subject_id
                for name, ses in (("ses-01", res.record.ses01), ("ses-02", res.record.ses02)):
                    d = base / name
                    outs += _write_session(ses, d)
                    outs.append(write_crop_sidecar(d / "crop_box.json", res.crop_box, cfg.preprocess.crop_dims))
                    lo, hi = res.ranges[name]
                    outs.append(write_range_sidecar(d / "norm_range.json", lo, hi, ["t1_pc", "t1_sd"]))
                outs.append(write_json(base / "ses-01" / "xfm_sd_to_pc.json",
                                       {"kind": "rigid", **res.sd_to_pc.to_dict()}))
                outs.append(write_json(base / "ses-02" / "xfm_to_ses01.json",
                                       {"kind": "rigid", **res.ses02_to_ses01.to_dict()}))
            outs.append(write_json(self.prep_dir / "preprocess.json",
                                   {"subjects": kept, "skipped": skipped, "registration_mse": reg}))
            return outs, {"kept": len(kept), "skipped": skipped}

        params = {"preprocess": self.cfg.to_dict()["preprocess"], "registration": self.cfg.to_dict()["registration"]}
        return self.manifest.run("preprocess", params, inputs, work)[1]

    def kept_subjects(self) -> list[str]:
        return read_json(self.prep_dir / "preprocess.json")["subjects"]

    def load_subject(self, sid: str, dose: float | None = None) -> SubjectRecord:
        base = self.prep_dir / sid
        s1 = read_session(base / "ses-01")
        s2 = read_session(base / "ses-02")
        if dose is not None:
            path = base / "ses-02" / ld_filename(dose)
            if not path.exists():
                raise DependencyError(f"simulate-dose stage has not produced {self.manifest.rel(path)}")
            s2 = replace(s2, t1_ld=read_nifti(path).replace(mask=s2.mask))
        xfm = RigidParams.from_dict(read_json(base / "ses-02" / "xfm_to_ses01.json"))
        return SubjectRecord(sid, s1, s2, "", xfm)

    # -- simulate-dose -----------------------------------------------------

    def simulate_dose(self, doses=None) -> bool:
        cfg = self.cfg
        doses = sorted(set(doses if doses else (*cfg.dose_levels, cfg.dose)))
        inputs = self._require("preprocess")
        ran = False
        for d in doses:
            def work(d=d):
                outs = []
                for sid in self.kept_subjects():
                    rec = simulate_subject(self.load_subject(sid), d, cfg.dose_model, cfg.seed, subject_index(sid))
                    outs.append(write_nifti(rec.ses02.t1_ld, self.prep_dir / sid / "ses-02" / ld_filename(d)))
                return outs, {"dose": d}

            params = {"dose": d, "dose_model": cfg.to_dict()["dose_model"], "seed": cfg.seed}
            ran |= self.manifest.run(f"simulate-dose/{dose_tag(d)}", params, inputs, work)[1]
        return ran

    # -- train -------------------------------------------------------------

    def _split_records(self, dose: float) -> dict[str, list[SubjectRecord]]:
        kept = set(self.kept_subjects())
        return {k: [self.load_subject(s, dose) for s in v if s in kept] for k, v in self.splits().items()}

    def train(self, mode: str, dose: float | None = None) -> bool:
        cfg = self.cfg
        dose = cfg.dose if dose is None else dose
        if mode not in MODES:
            raise InvalidArgumentError(f"mode must be one of {MODES}")
        inputs = self._require(f"simulate-dose/{dose_tag(dose)}") + self._require("generate")
        tcfg, vcfg = cfg.train_config(mode, dose), cfg.vnet_config(mode)

        def work():
            splits = self._split_records(dose)
            result = train(splits, tcfg, vcfg)
            files = write_training_outputs(result, self.model_dir(mode, dose))
            return list(files.values()), {"best_epoch": result.best_epoch, "best_val_loss": result.best_val_loss}

        params = {"train": tcfg.to_dict(), "vnet": vcfg.to_dict()}
        return self.manifest.run(f"train/{dose_tag(dose)}/{mode}", params, inputs, work)[1]

    # -- evaluate ----------------------------------------------------------

    def evaluate(self, dose: float | None = None) -> bool:
        cfg = self.cfg
        dose = cfg.dose if dose is None else dose
        tag = dose_tag(dose)
        inputs = self._require(f"simulate-dose/{tag}")
        for mode in MODES:
            stage = f"train/{tag}/{mode}"
            if stage not in self.manifest.stages:
                raise DependencyError(f"missing checkpoint: run the train stage for {mode} at dose {dose} first")
            inputs += self._require(stage)

        def work():
            out_dir = self.eval_dir(dose)
            models = {m: load_checkpoint(self.model_dir(m, dose) / "model.lvce")[0] for m in MODES}
            kept = set(self.kept_subjects())
            rows, outs = [], []
            for sid in self.splits()["test"]:
                if sid not in kept:
                    continue
                rec = self.load_subject(sid, dose)
                mask = rec.ses02.mask if cfg.masked_metrics else None
                ref = rec.ses02.t1_sd
                rows.append(metrics_row(sid, "t1_ld", dose, rec.ses02.t1_ld, ref, mask))
                for mode, model in models.items():
                    pred = predict(model, make_sample(rec, mode).inputs)
                    rows.append(metrics_row(sid, mode, dose, pred, ref, mask))
                    outs.append(write_nifti(pred.replace(mask=None), out_dir / "pred" / mode / f"{sid}.nii.gz"))
            if not rows:
                raise InvalidArgumentError("no test subjects survived preprocessing")
            outs.append(write_metrics_csv(rows, out_dir / "metrics.csv"))
            reports = []
            by = {m: [r for r in rows if r.model_tag == m] for m in MODEL_TAGS}
            for a, b in (("longitudinal", "single_session"), ("longitudinal", "t1_ld"), ("single_session", "t1_ld")):
                for metric in METRICS:
                    reports.append(compare_models(by[a], by[b], metric))
            outs.append(write_comparison_json(reports, out_dir / "comparison.json"))
            table = out_dir / "table.txt"
            table.write_text(results_table(rows))
            outs.append(table)
            return outs, {"n_test": len(by["t1_ld"])}

        params = {"masked": cfg.masked_metrics, "dose": dose}
        return self.manifest.run(f"evaluate/{tag}", params, inputs, work)[1]

    # -- dose sweep --------------------------------------------------------

    def dose_sweep(self, modes=MODES, doses=None) -> bool:
        doses = sorted(doses or self.cfg.dose_levels)
        self.simulate_dose(doses)
        for d in doses:
            for m in MODES:
                self.train(m, d)
            self.evaluate(d)
        inputs = [self.eval_dir(d) / "metrics.csv" for d in doses]
        modes = tuple(modes)

        def work():
            rows = [r for d in doses for r in read_metrics_csv(self.eval_dir(d) / "metrics.csv")]
            agg, slopes = [], {}
            for mode in modes:
                for metric in METRICS:
                    means = []
                    for d in doses:
                        sel = [r for r in rows if r.model_tag == mode and abs(r.dose - d) < 1e-12]
                        mean, sd = summarize(sel, metric)
                        agg.append({"model": mode, "dose": d, "metric": metric, "mean": mean, "sd": sd, "n": len(sel)})
                        means.append(mean)
                    if len(doses) >= 3:
                        slopes[f"{mode}/{metric}"] = slope_regression(doses, means).to_dict()
            self.sweep_dir.mkdir(parents=True, exist_ok=True)
            csv_path = self.sweep_dir / "sweep_metrics.csv"
            with open(csv_path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(SWEEP_FIELDS)
                for a in agg:
                    w.writerow([a["model"], repr(a["dose"]), a["metric"], repr(a["mean"]), repr(a["sd"]), a["n"]])
            slope_path = write_json(self.sweep_dir / "slopes.json", {"doses": doses, "slopes": slopes})
            return [csv_path, slope_path], {"rows": len(agg)}

        params = {"modes": list(modes), "doses": doses}
        return self.manifest.run("dose-sweep", params, inputs, work)[1]

    # -- report ------------------------------------------------------------

    def report(self) -> bool:
        cfg = self.cfg
        tag = dose_tag(cfg.dose)
        inputs = self._require(f"evaluate/{tag}")
        sweep = "dose-sweep" in self.manifest.stages
        if sweep:
            inputs += self._require("dose-sweep")

        def work():
            out = self.report_dir
            out.mkdir(parents=True, exist_ok=True)
            rows = read_metrics_csv(self.eval_dir(cfg.dose) / "metrics.csv")
            outs = []
            table = out / "table.txt"
            table.write_text(results_table(rows))
            outs.append(table)
            for metric in METRICS:
                scale = 100.0 if metric == "mse" else 1.0
                groups = {MODEL_LABELS[m]: [scale * r.metric(metric) for r in rows if r.model_tag == m]
                          for m in MODEL_TAGS}
                q = out / f"boxplot_{metric}.csv"
                with open(q, "w", newline="") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(["model", "n", "min", "whisker_low", "q1", "median", "q3", "whisker_high", "max"])
                    for name, vals in groups.items():
                        s = box_stats(vals)
                        w.writerow([name, s["n"]] + [repr(s[k]) for k in
                                   ("min", "whisker_low", "q1", "median", "q3", "whisker_high", "max")])
                outs.append(q)
                label = "MSE (x10^-2)" if metric == "mse" else metric.upper()
                outs.append(boxplot_svg(groups, f"{label} at dose {cfg.dose:g}", label, out / f"boxplot_{metric}.svg"))
            if sweep:
                outs += self._dose_plots(out)
            outs += self._panels(out / "panels")
            return outs, {}

        return self.manifest.run("report", {"dose": cfg.dose, "sweep": sweep}, inputs, work)[1]

    def _dose_plots(self, out: Path) -> list[Path]:
        with open(self.sweep_dir / "sweep_metrics.csv", newline="") as fh:
            agg = list(csv.DictReader(fh))
        slopes = read_json(self.sweep_dir / "slopes.json")["slopes"]
        outs = []
        for metric in METRICS:
            series = {}
            for mode in MODES:
                sel = [a for a in agg if a["model"] == mode and a["metric"] == metric]
                if not sel:
                    continue
                fit = slopes.get(f"{mode}/{metric}")
                series[MODEL_LABELS[mode]] = {
                    "x": [float(a["dose"]) for a in sel], "y": [float(a["mean"]) for a in sel],
                    "err": [float(a["sd"]) for a in sel],
                    "fit": None if fit is None else (fit["slope"], fit["intercept"]),
                }
            if series:
                outs.append(lineplot_svg(series, f"{metric.upper()} versus dose", "dose fraction", metric.upper(),
                                         out / f"dose_{metric}.svg"))
        return outs

    def _panels(self, out: Path) -> list[Path]:
        cfg = self.cfg
        pred_dir = self.eval_dir(cfg.dose) / "pred" / "longitudinal"
        outs = []
        for p in sorted(pred_dir.glob("*.nii.gz")):
            sid = p.name.split(".")[0]
            rec = self.load_subject(sid, cfg.dose)
            pred = read_nifti(p).data
            img, emax = slice_panel(rec.ses02.t1_pc.data, rec.ses02.t1_ld.data, pred, rec.ses02.t1_sd.data)
            outs.append(write_pgm(out / f"{sid}.pgm", img,
                                  f"{sid} tiles PC LD prediction SD abs-error; error scaled to max {emax:.4g}"))
        return outs


def _write_session(ses: Session, d: Path) -> list[Path]:
    outs = [write_nifti(ses.t1_pc.replace(mask=None), d / "t1_pc.nii.gz"),
            write_nifti(ses.t1_sd.replace(mask=None), d / "t1_sd.nii.gz"),
            write_nifti(ses.t1_pc.replace(mask=ses.mask), d / "mask.nii.gz", mask=True)]
    if ses.lesion_mask is not None:
        outs.append(write_nifti(ses.t1_pc.replace(mask=ses.lesion_mask), d / "lesion_mask.nii.gz", mask=True))
    return outs


def run_all(study: Study, sweep: bool = False) -> None:
    study.generate()
    study.preprocess()
    study.simulate_dose()
    for mode in MODES:
        study.train(mode)
    study.evaluate()
    if sweep:
        study.dose_sweep()
    study.report()
