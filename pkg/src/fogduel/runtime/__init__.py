"""Orchestration, configuration, CLI, metrics, and verification."""

from .config import ConfigError, RunConfig, load_config, validate_config
from .orchestrate import RuntimeCrashError, TrainResult, ablate, evaluate_checkpoint, train
from .verify import check

__all__ = [
    "ConfigError",
    "RunConfig",
    "RuntimeCrashError",
    "TrainResult",
    "ablate",
    "check",
    "evaluate_checkpoint",
    "load_config",
    "train",
    "validate_config",
]
