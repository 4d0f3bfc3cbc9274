"""Adam, plateau scheduling, augmentation and the training loop."""

from .augment import AugmentConfig, AugmentRecord, SpatialTransform, apply_spatial, augment_sample, draw_spatial
from .loop import (
    MODES,
    EpochRecord,
    TrainConfig,
    TrainingSample,
    TrainResult,
    evaluate_loss,
    make_sample,
    predict,
    read_loss_csv,
    train,
    write_loss_csv,
    write_training_outputs,
)
from .optim import AdamState, PlateauState, SchedulerConfig, adam_step, plateau_update

__all__ = [
    "AugmentConfig", "AugmentRecord", "SpatialTransform", "apply_spatial", "augment_sample", "draw_spatial",
    "MODES", "EpochRecord", "TrainConfig", "TrainingSample", "TrainResult", "evaluate_loss", "make_sample",
    "predict", "read_loss_csv", "train", "write_loss_csv", "write_training_outputs",
    "AdamState", "PlateauState", "SchedulerConfig", "adam_step", "plateau_update",
]
