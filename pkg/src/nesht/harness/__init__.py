"""Experiment harness: configs, orchestration, persistence and the ``nesht`` CLI."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .registry import build_problem, true_support
from .runner import (
    SummaryRow,
    execute,
    heatmap_export,
    read_heatmap,
    read_summary,
    read_trajectory,
    summarize_run,
    support_metrics,
    theory_checks,
    variance_probe,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "SummaryRow",
    "build_problem",
    "execute",
    "heatmap_export",
    "load_config",
    "parse_config",
    "read_heatmap",
    "read_summary",
    "read_trajectory",
    "summarize_run",
    "support_metrics",
    "theory_checks",
    "true_support",
    "variance_probe",
]
