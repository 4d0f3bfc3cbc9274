"""``lvce`` command-line interface.

Exit codes: 0 success, 2 invalid configuration, 3 stage failure,
4 selftest failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_SELFTEST = 4

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS")

log = logging.getLogger("lvce")


def _global_flags(p: argparse.ArgumentParser, top: bool) -> None:
    # the sub-parser copies use SUPPRESS so they only override when given
    d = None if top else argparse.SUPPRESS
    p.add_argument("--config", default=d, help="study config JSON")
    p.add_argument("--seed", type=int, default=d, help="study seed (overrides every random stream)")
    p.add_argument("--output-dir", default=d, help="run directory")
    p.add_argument("--threads", type=int, default=d, help="BLAS/numba thread count")
    p.add_argument("--masked-metrics", choices=("on", "off"), default=d, help="restrict metrics to the brain mask")
    p.add_argument("-v", "--verbose", action="store_true", default=False if top else argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lvce", description="Longitudinal virtual contrast enhancement study pipeline.")
    _global_flags(parser, top=True)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help):
        sp = sub.add_parser(name, help=help)
        _global_flags(sp, top=False)
        return sp

    add("generate", "synthesize the phantom cohort")
    add("preprocess", "resample, crop, register and normalize")
    sp = add("simulate-dose", "simulate low-dose ses-02 images")
    sp.add_argument("--dose", type=float, action="append", help="dose fraction (repeatable; default: all levels)")
    sp = add("train", "train one model")
    sp.add_argument("--mode", choices=("longitudinal", "single_session", "both"), default="both")
    sp.add_argument("--dose", type=float, default=None)
    sp = add("evaluate", "score both models and the T1-LD baseline on the test split")
    sp.add_argument("--dose", type=float, default=None)
    sp = add("dose-sweep", "train and evaluate at every dose level, then fit slopes")
    sp.add_argument("--dose", type=float, action="append", help="dose fraction (repeatable; default: config levels)")
    add("report", "write tables, SVG figures and PGM slice panels")
    sp = add("run", "generate through report in one go")
    sp.add_argument("--sweep", action="store_true", help="include the dose sweep")
    add("selftest", "gradient checks and metric/statistics oracles")
    return parser


def _set_threads(n) -> None:
    if n is None:
        return
    if n < 1:
        raise ValueError("--threads must be positive")
    for var in THREAD_VARS:
        os.environ[var] = str(n)


def load_config(args):
    from .config import StudyConfig

    cfg = StudyConfig.load(args.config) if args.config else StudyConfig()
    masked = None if args.masked_metrics is None else args.masked_metrics == "on"
    return cfg.with_overrides(seed=args.seed, output_dir=args.output_dir, masked_metrics=masked)


def selftest(out=None) -> bool:
    """Run the built-in oracles; returns True when all pass."""
    out = out or sys.stdout
    import numpy as np

    from ..evalstat import paired_t_test, psnr, ssim, wilcoxon_signed_rank
    from ..neuralvol import VNetConfig, VNetModel, gradient_check
    from .selfcheck import conv_oracle_error

    results = []

    cfg = VNetConfig(in_channels=2, levels=2, base_channels=4)
    model = VNetModel.initialize(cfg, seed=1, dtype=np.float64, zero_head=False)
    rng = np.random.default_rng(0)
    x, y = rng.random((2, 8, 8, 8)), rng.random((8, 8, 8))
    rep = gradient_check(model, x, y, fraction=0.01)
    results.append(("V-Net gradient check", rep.passed, f"max rel err {rep.max_rel_error:.2e} over {rep.n_checked}"))

    err = conv_oracle_error(n_shapes=5, seed=0)
    results.append(("conv3d naive oracle", err < 1e-10, f"max abs err {err:.2e}"))

    a, b = np.full((12, 12, 12), 0.5), np.full((12, 12, 12), 0.25)
    s = ssim(a, b)
    want = (2 * 0.125 + 1e-4) / (0.3125 + 1e-4)
    results.append(("SSIM constant images", abs(s - want) < 1e-6, f"{s:.6f}"))
    p = psnr(a, a + 0.1)
    results.append(("PSNR 20 dB", abs(p - 20.0) < 1e-9, f"{p:.9f}"))

    w = wilcoxon_signed_rank([1.0, 2.0, 3.0])
    results.append(("Wilcoxon exact", abs(w.p - 0.25) < 1e-12, f"p={w.p}"))
    t = paired_t_test([1.0, 2.0, 3.0])
    results.append(("paired t", abs(t.t - 2 * 3 ** 0.5) < 1e-6, f"t={t.t:.6f} p={t.p:.6f}"))

    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}", file=out)
    return all(ok for _, ok, _ in results)


def dispatch(args, cfg) -> None:
    from ..trainer import MODES
    from .study import Study, run_all

    study = Study(cfg)
    cmd = args.command
    if cmd == "generate":
        study.generate()
    elif cmd == "preprocess":
        study.preprocess()
    elif cmd == "simulate-dose":
        study.simulate_dose(args.dose)
    elif cmd == "train":
        for mode in MODES if args.mode == "both" else (args.mode,):
            study.train(mode, args.dose)
    elif cmd == "evaluate":
        study.evaluate(args.dose)
        print((study.eval_dir(cfg.dose if args.dose is None else args.dose) / "table.txt").read_text(), end="")
    elif cmd == "dose-sweep":
        study.dose_sweep(doses=args.dose)
    elif cmd == "report":
        study.report()
    elif cmd == "run":
        run_all(study, sweep=args.sweep)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _set_threads(args.threads)
    except ValueError as exc:
        print(f"lvce: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    # heavy imports only after the thread variables are set
    from ..errors import InvalidArgumentError, LVCEError

    if args.command == "selftest":
        return EXIT_OK if selftest() else EXIT_SELFTEST
    try:
        cfg = load_config(args)
    except (InvalidArgumentError, OSError, ValueError) as exc:
        print(f"lvce: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        dispatch(args, cfg)
    except (LVCEError, OSError, FloatingPointError) as exc:
        print(f"lvce: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
