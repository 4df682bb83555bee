"""Experiment pipeline and command-line interface."""

from .config import ExperimentConfig, load_config
from .experiments import (
    CertificationError,
    RunReport,
    cmd_auto,
    cmd_compare_gd_bo,
    cmd_gen_data,
    cmd_metric_failure,
    cmd_train_encoder,
)
from .svg import emit_svg

__all__ = [
    "CertificationError",
    "ExperimentConfig",
    "RunReport",
    "cmd_auto",
    "cmd_compare_gd_bo",
    "cmd_gen_data",
    "cmd_metric_failure",
    "cmd_train_encoder",
    "emit_svg",
    "load_config",
]
