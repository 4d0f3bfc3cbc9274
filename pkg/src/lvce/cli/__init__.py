"""Command-line pipeline: configuration, stage runners, manifest and figures."""

from .config import PreprocessConfig, StudyConfig, desk_train_config, quick_config
from .manifest import RunManifest
from .study import Study, run_all

__all__ = ["PreprocessConfig", "StudyConfig", "desk_train_config", "quick_config", "RunManifest", "Study", "run_all"]
