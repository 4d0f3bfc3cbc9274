"""Training loop for the longitudinal and single-session models."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..dosesim import check_dose
from ..errors import InvalidArgumentError, ShapeError, TrainingDivergenceError
from ..neuralvol import Tensor, VNetConfig, VNetModel, mse_loss, save_checkpoint
from ..volcore.sidecar import write_json
from ..volcore.volume import LONGITUDINAL_ORDER, SINGLE_SESSION_ORDER, MultiChannelVolume, Volume, stack_channels
from .augment import AugmentConfig, augment_sample
from .optim import AdamState, PlateauState, SchedulerConfig, adam_step, plateau_update

log = logging.getLogger(__name__)

MODES = ("longitudinal", "single_session")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 1
    lr: float = 1e-4
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    augmentation: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0
    mode: str = "longitudinal"
    dose: float = 0.25

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidArgumentError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size != 1:
            raise InvalidArgumentError("only batch_size 1 is supported")
        if not self.lr > 0:
            raise InvalidArgumentError(f"lr must be positive, got {self.lr}")
        b1, b2 = self.adam_betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1) or self.adam_eps <= 0:
            raise InvalidArgumentError("invalid Adam hyper-parameters")
        if self.mode not in MODES:
            raise InvalidArgumentError(f"mode must be one of {MODES}, got {self.mode!r}")
        check_dose(self.dose)
        object.__setattr__(self, "adam_betas", tuple(float(b) for b in self.adam_betas))

    @property
    def in_channels(self) -> int:
        return 4 if self.mode == "longitudinal" else 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, d) -> "TrainConfig":
        d = dict(d)
        if "scheduler" in d:
            d["scheduler"] = SchedulerConfig(**d["scheduler"])
        if "augmentation" in d:
            d["augmentation"] = AugmentConfig.from_dict(d["augmentation"])
        if "adam_betas" in d:
            d["adam_betas"] = tuple(d["adam_betas"])
        return cls(**d)


@dataclass(frozen=True)
class TrainingSample:
    subject_id: str
    inputs: MultiChannelVolume
    target: Volume


def make_sample(record, mode: str) -> TrainingSample:
    """Stack the channels of a preprocessed subject for ``mode``; target is ses-02 T1-SD."""
    s1, s2 = record.ses01, record.ses02
    if s2.t1_ld is None:
        raise InvalidArgumentError(f"{record.subject_id}: ses-02 has no simulated low-dose image")
    if mode == "longitudinal":
        inputs = stack_channels([s1.t1_pc, s1.t1_sd, s2.t1_pc, s2.t1_ld], LONGITUDINAL_ORDER)
    elif mode == "single_session":
        inputs = stack_channels([s2.t1_pc, s2.t1_ld], SINGLE_SESSION_ORDER)
    else:
        raise InvalidArgumentError(f"unknown mode {mode!r}")
    return TrainingSample(record.subject_id, inputs, s2.t1_sd)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class TrainResult:
    model: VNetModel  # parameters of the best validation epoch
    curve: list[EpochRecord]
    best_epoch: int
    best_val_loss: float
    config: TrainConfig

    @property
    def lr_curve(self) -> list[float]:
        return [r.lr for r in self.curve]

    @property
    def loss_curve(self) -> list[tuple[float, float]]:
        return [(r.train_loss, r.val_loss) for r in self.curve]


def _as_samples(items, mode: str) -> list[TrainingSample]:
    return [s if isinstance(s, TrainingSample) else make_sample(s, mode) for s in items]


def _check_channels(samples: Sequence[TrainingSample], n: int) -> None:
    for s in samples:
        if s.inputs.n_channels != n:
            raise ShapeError(f"{s.subject_id}: model expects {n} input channels, got {s.inputs.n_channels}")


def evaluate_loss(model: VNetModel, samples: Sequence[TrainingSample]) -> float:
    """Mean MSE over samples, no augmentation."""
    total = 0.0
    for s in samples:
        x = Tensor(s.inputs.as_array(model.dtype))
        total += float(mse_loss(model.forward(x), s.target.data[None].astype(model.dtype)).data)
    return total / len(samples)


def predict(model: VNetModel, inputs: MultiChannelVolume) -> Volume:
    from ..neuralvol import vnet_forward

    return vnet_forward(model, inputs)


def train(cohort: Mapping[str, Sequence], cfg: TrainConfig, vnet: VNetConfig | None = None) -> TrainResult:
    """Train one model; ``cohort`` maps ``"train"``/``"val"`` to records or samples.

    Each epoch visits the training samples in an order shuffled from
    ``(seed, epoch)``; augmentation draws come from ``(seed, epoch, position)``
    so results never depend on anything but the configuration.
    """
    vnet = vnet or VNetConfig(in_channels=cfg.in_channels)
    if vnet.in_channels != cfg.in_channels:
        raise InvalidArgumentError(f"mode {cfg.mode} needs in_channels={cfg.in_channels}, got {vnet.in_channels}")
    train_set = _as_samples(cohort.get("train", ()), cfg.mode)
    val_set = _as_samples(cohort.get("val", ()), cfg.mode)
    if not train_set:
        raise InvalidArgumentError("training split is empty")
    if not val_set:
        raise InvalidArgumentError("validation split is empty")
    _check_channels(train_set, cfg.in_channels)
    _check_channels(val_set, cfg.in_channels)

    model = VNetModel.initialize(vnet, seed=cfg.seed)
    state = AdamState()
    sched = PlateauState(lr=cfg.lr)
    best_val, best_epoch, best_state = float("inf"), -1, model.state()
    curve: list[EpochRecord] = []
    for epoch in range(cfg.epochs):
        lr = sched.lr
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_set))
        running = 0.0
        for pos, idx in enumerate(order):
            s = train_set[idx]
            rng = np.random.default_rng([cfg.seed, epoch, pos])
            inputs, target, _ = augment_sample(s.inputs, s.target, cfg.augmentation, rng)
            model.zero_grad()
            loss = mse_loss(model.forward(Tensor(inputs.as_array(model.dtype))), target.data[None].astype(model.dtype))
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDivergenceError(f"epoch {epoch}: non-finite training loss on {s.subject_id}")
            loss.backward()
            try:
                adam_step(model.parameters, state, lr, cfg.adam_betas, cfg.adam_eps)
            except TrainingDivergenceError as exc:
                raise TrainingDivergenceError(f"epoch {epoch}: {exc}") from exc
            running += value
        train_loss = running / len(train_set)
        val_loss = evaluate_loss(model, val_set)
        if not np.isfinite(val_loss):
            raise TrainingDivergenceError(f"epoch {epoch}: non-finite validation loss")
        curve.append(EpochRecord(epoch, train_loss, val_loss, lr))
        if val_loss < best_val:
            best_val, best_epoch, best_state = val_loss, epoch, model.state()
        plateau_update(sched, val_loss, cfg.scheduler)
        log.info("%s epoch %d train %.6g val %.6g lr %.3g", cfg.mode, epoch, train_loss, val_loss, lr)
    model.load_state(best_state)
    return TrainResult(model, curve, best_epoch, best_val, cfg)


def write_loss_csv(curve: Sequence[EpochRecord], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for r in curve:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.lr)])
    return path


def read_loss_csv(path) -> list[EpochRecord]:
    with open(path, newline="") as fh:
        return [
            EpochRecord(int(r["epoch"]), float(r["train_loss"]), float(r["val_loss"]), float(r["lr"]))
            for r in csv.DictReader(fh)
        ]


def write_training_outputs(result: TrainResult, out_dir, vnet: VNetConfig | None = None) -> dict[str, Path]:
    """Checkpoint, loss/lr CSV and the echoed training config."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = save_checkpoint(result.model, out / "model.lvce",
                           meta={"mode": result.config.mode, "dose": result.config.dose,
                                 "best_epoch": result.best_epoch, "best_val_loss": result.best_val_loss})
    curve = write_loss_csv(result.curve, out / "loss.csv")
    cfg = write_json(out / "train_config.json",
                     {"train": result.config.to_dict(), "vnet": result.model.config.to_dict()})
    return {"checkpoint": ckpt, "loss_csv": curve, "config": cfg}
