import json
import xml.etree.ElementTree as ET
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from lvce.cli.config import StudyConfig, desk_train_config, quick_config
from lvce.cli.figures import box_stats, read_pgm
from lvce.cli.main import EXIT_CONFIG, EXIT_OK, EXIT_SELFTEST, EXIT_STAGE, main
from lvce.cli.manifest import file_digest
from lvce.volcore.nifti import read_nifti


def write_config(path: Path, cfg: StudyConfig) -> Path:
    path.write_text(json.dumps(cfg.to_dict()))
    return path


def cli(*args) -> int:
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def quick_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = write_config(root / "cfg.json", quick_config())
    out = root / "out"
    assert cli("--config", cfg, "--output-dir", out, "run") == EXIT_OK
    return cfg, out


def manifest(out: Path) -> dict:
    return json.loads((out / "manifest.json").read_text())


class TestGenerate:
    def test_counts_and_splits(self, quick_run):
        _, out = quick_run
        doc = json.loads((out / "cohort" / "cohort.json").read_text())
        assert len(doc["subjects"]) == 6
        splits = [e["split"] for e in doc["subjects"]]
        assert (splits.count("train"), splits.count("val"), splits.count("test")) == (3, 1, 2)
        for e in doc["subjects"]:
            for ses in ("ses-01", "ses-02"):
                for f in ("t1_pc", "t1_sd", "mask"):
                    assert (out / "cohort" / e["subject_id"] / ses / f"{f}.nii.gz").exists()

    def test_deterministic_bytes(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", quick_config())
        for d in ("a", "b"):
            assert cli("--config", cfg, "--output-dir", tmp_path / d, "generate") == EXIT_OK
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a" / "cohort").rglob("*") if p.is_file())
        assert files
        for f in files:
            assert file_digest(tmp_path / "a" / f) == file_digest(tmp_path / "b" / f)

    def test_seed_flag_changes_cohort(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", quick_config())
        cli("--config", cfg, "--output-dir", tmp_path / "a", "generate")
        cli("--config", cfg, "--output-dir", tmp_path / "b", "--seed", 7, "generate")
        f = Path("cohort/sub-001/ses-01/t1_pc.nii.gz")
        assert file_digest(tmp_path / "a" / f) != file_digest(tmp_path / "b" / f)


class TestConfigErrors:
    def test_zero_subjects_exit_2(self, tmp_path):
        doc = quick_config().to_dict()
        doc["phantom"]["n_subjects"] = 0
        (tmp_path / "c.json").write_text(json.dumps(doc))
        assert cli("--config", tmp_path / "c.json", "--output-dir", tmp_path / "o", "generate") == EXIT_CONFIG

    def test_unknown_key_exit_2(self, tmp_path):
        doc = quick_config().to_dict()
        doc["colour"] = "blue"
        (tmp_path / "c.json").write_text(json.dumps(doc))
        assert cli("--config", tmp_path / "c.json", "generate") == EXIT_CONFIG

    def test_bad_json_exit_2(self, tmp_path):
        (tmp_path / "c.json").write_text("{not json")
        assert cli("--config", tmp_path / "c.json", "generate") == EXIT_CONFIG

    def test_missing_config_exit_2(self, tmp_path):
        assert cli("--config", tmp_path / "nope.json", "generate") == EXIT_CONFIG

    def test_bad_threads_exit_2(self, tmp_path):
        assert cli("--threads", 0, "--output-dir", tmp_path, "generate") == EXIT_CONFIG

    def test_config_round_trip(self):
        cfg = quick_config()
        assert StudyConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg

    def test_partial_train_section_keeps_desk_preset(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"train": {"epochs": 5, "augmentation": {"rot_max": 0.0}}}))
        train = StudyConfig.load(tmp_path / "c.json").train
        desk = desk_train_config()
        assert train.epochs == 5 and train.lr == desk.lr
        assert train.augmentation.rot_max == 0.0 and train.augmentation.offset_prob == 0.0
        assert StudyConfig().train == replace(desk, seed=StudyConfig().seed)

    def test_non_object_train_section_exit_2(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"train": 3}))
        assert cli("--config", tmp_path / "c.json", "generate") == EXIT_CONFIG

    def test_study_seed_is_authoritative(self):
        cfg = quick_config(seed=99)
        assert cfg.phantom.seed == 99 and cfg.train.seed == 99


class TestStageOrder:
    def test_preprocess_before_generate_exit_3(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", quick_config())
        assert cli("--config", cfg, "--output-dir", tmp_path / "o", "preprocess") == EXIT_STAGE
        assert "generate" in capsys.readouterr().err

    def test_evaluate_without_checkpoint_names_train(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", quick_config())
        out = tmp_path / "o"
        for stage in ("generate", "preprocess", "simulate-dose"):
            assert cli("--config", cfg, "--output-dir", out, stage) == EXIT_OK
        assert cli("--config", cfg, "--output-dir", out, "evaluate") == EXIT_STAGE
        assert "train" in capsys.readouterr().err


class TestPreprocess:
    def test_outputs_normalized(self, quick_run):
        _, out = quick_run
        paths = [p for p in (out / "preprocessed").glob("sub-*/ses-0*/t1_*.nii.gz") if "t1_ld" not in p.name]
        assert len(paths) == 6 * 2 * 2
        for p in paths:
            v = read_nifti(p).data
            assert v.shape == (16, 16, 16)
            assert v.min() >= -1e-6 and v.max() <= 1 + 1e-6

    def test_registration_reduces_mismatch(self, quick_run):
        _, out = quick_run
        doc = json.loads((out / "preprocessed" / "preprocess.json").read_text())
        assert not doc["skipped"]
        for sid, rec in doc["registration_mse"].items():
            before, after = rec["ses02_to_ses01"]
            assert after < before, sid

    def test_sidecars(self, quick_run):
        _, out = quick_run
        d = out / "preprocessed" / "sub-001"
        crop = json.loads((d / "ses-01" / "crop_box.json").read_text())
        assert crop == json.loads((d / "ses-02" / "crop_box.json").read_text())
        xfm = json.loads((d / "ses-02" / "xfm_to_ses01.json").read_text())
        assert xfm["kind"] == "rigid" and len(xfm["rotation"]) == 3
        rng = json.loads((d / "ses-01" / "norm_range.json").read_text())
        assert rng["min"] < rng["max"]


class TestIdempotence:
    def test_rerun_does_no_work(self, quick_run):
        cfg, out = quick_run
        before = (out / "manifest.json").read_bytes()
        stamp = (out / "models" / "d25" / "longitudinal" / "model.lvce").stat().st_mtime_ns
        assert cli("--config", cfg, "--output-dir", out, "run") == EXIT_OK
        assert (out / "manifest.json").read_bytes() == before
        assert (out / "models" / "d25" / "longitudinal" / "model.lvce").stat().st_mtime_ns == stamp

    def test_every_file_in_manifest(self, quick_run):
        _, out = quick_run
        listed = set()
        for rec in manifest(out)["stages"].values():
            listed |= set(rec["outputs"])
        on_disk = {p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file()}
        assert on_disk - listed == {"manifest.json"}
        assert listed <= on_disk

    def test_changed_output_triggers_rerun(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", quick_config())
        out = tmp_path / "o"
        cli("--config", cfg, "--output-dir", out, "generate")
        target = out / "cohort" / "cohort.json"
        good = target.read_bytes()
        target.write_text("{}")
        cli("--config", cfg, "--output-dir", out, "generate")
        assert target.read_bytes() == good


class TestEvaluateAndReport:
    def test_metrics_csv_has_three_models(self, quick_run):
        _, out = quick_run
        lines = (out / "eval" / "d25" / "metrics.csv").read_text().splitlines()
        assert lines[0] == "subject,model,dose,mse,psnr,ssim"
        models = [ln.split(",")[1] for ln in lines[1:]]
        assert models == ["t1_ld"] * 2 + ["single_session"] * 2 + ["longitudinal"] * 2

    def test_comparison_json(self, quick_run):
        _, out = quick_run
        doc = json.loads((out / "eval" / "d25" / "comparison.json").read_text())
        assert len(doc["comparisons"]) == 9
        assert {c["test"] for c in doc["comparisons"]} <= {"wilcoxon", "paired_t", "none"}

    def test_table_layout(self, quick_run):
        _, out = quick_run
        lines = (out / "report" / "table.txt").read_text().splitlines()
        assert [ln.split("  ")[0] for ln in lines[2:]] == ["T1-LD", "Single Session", "Longitudinal"]
        assert all("±" in ln for ln in lines[2:])

    def test_boxplot_files(self, quick_run):
        _, out = quick_run
        for metric in ("mse", "psnr", "ssim"):
            root = ET.parse(out / "report" / f"boxplot_{metric}.svg").getroot()
            assert root.tag.endswith("svg")
            rows = (out / "report" / f"boxplot_{metric}.csv").read_text().splitlines()
            assert [r.split(",")[0] for r in rows[1:]] == ["T1-LD", "Single Session", "Longitudinal"]

    def test_slice_panels(self, quick_run):
        _, out = quick_run
        panels = sorted((out / "report" / "panels").glob("*.pgm"))
        assert len(panels) == 2
        img = read_pgm(panels[0])
        assert img.dtype == np.uint8 and img.shape == (16, 5 * 16)

    def test_masked_metrics_flag(self, quick_run, tmp_path):
        cfg, out = quick_run
        import shutil

        other = tmp_path / "unmasked"
        shutil.copytree(out, other)
        assert cli("--config", cfg, "--output-dir", other, "evaluate", "--masked-metrics", "off") == EXIT_OK
        a = (out / "eval" / "d25" / "metrics.csv").read_text()
        b = (other / "eval" / "d25" / "metrics.csv").read_text()
        assert a != b


class TestSweep:
    def test_sweep_rows_and_slopes(self, quick_run, tmp_path):
        import shutil

        from lvce.dosesim import PAPER_DOSE_LEVELS

        _, out = quick_run
        other = tmp_path / "sweep"
        shutil.copytree(out, other)
        cfg = write_config(tmp_path / "c.json", quick_config(dose_levels=PAPER_DOSE_LEVELS,
                                                             train=quick_config().train.__class__(epochs=1)))
        assert cli("--config", cfg, "--output-dir", other, "dose-sweep") == EXIT_OK
        rows = (other / "sweep" / "sweep_metrics.csv").read_text().splitlines()
        assert rows[0] == "model,dose,metric,mean,sd,n"
        assert len(rows) == 1 + 2 * 5 * 3
        slopes = json.loads((other / "sweep" / "slopes.json").read_text())["slopes"]
        assert len(slopes) == 6
        assert cli("--config", cfg, "--output-dir", other, "report") == EXIT_OK
        for metric in ("mse", "psnr", "ssim"):
            ET.parse(other / "report" / f"dose_{metric}.svg")


class TestSelftest:
    def test_passes(self, capsys):
        assert cli("selftest") == EXIT_OK
        out = capsys.readouterr().out
        assert "FAIL" not in out and out.count("PASS") >= 5

    def test_broken_metric_exit_4(self, monkeypatch):
        import lvce.evalstat

        monkeypatch.setattr(lvce.evalstat, "psnr", lambda a, b, *k, **kw: 0.0)
        assert cli("selftest") == EXIT_SELFTEST


def test_box_stats_tukey():
    s = box_stats([1, 2, 3, 4, 100])
    assert s["median"] == 3 and s["q1"] == 2 and s["q3"] == 4
    assert s["whisker_high"] == 4 and s["outliers"] == [100]
