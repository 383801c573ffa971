"""Experiment harness: INI configs, replicated runs, MSE and CSV export."""
from .config import ConfigParseError, load_experiment, parse_experiment
from .harness import (
    ExperimentSpec,
    ResultRecord,
    compute_mse,
    export_csv,
    group_by_point,
    read_csv,
    run_experiment,
)

__all__ = [
    "ConfigParseError",
    "ExperimentSpec",
    "ResultRecord",
    "compute_mse",
    "export_csv",
    "group_by_point",
    "load_experiment",
    "parse_experiment",
    "read_csv",
    "run_experiment",
]
