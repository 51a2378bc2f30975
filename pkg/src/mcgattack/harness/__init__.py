"""Experiment orchestration, metrics, persistence and the CLI."""

from .config import ExperimentConfig, load_config
from .experiment import Arm, evaluate, run_experiment, select_evaluation
from .metrics import MetricsReport, compute_metrics, emit_curve

__all__ = [
    "Arm",
    "ExperimentConfig",
    "MetricsReport",
    "compute_metrics",
    "emit_curve",
    "evaluate",
    "load_config",
    "run_experiment",
    "select_evaluation",
]
