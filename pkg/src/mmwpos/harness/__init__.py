"""Configuration, experiment drivers, result serialization and the CLI."""

from mmwpos.harness.config import ConfigError, ExperimentConfig, default_config, load, loads
from mmwpos.harness.experiments import (
    HarnessError,
    hybrid_reference,
    localize_once,
    run_assoc_sweep,
    run_bounds_sweep,
    run_localization_mc,
    run_localize,
)
from mmwpos.harness.results import ResultTable

__all__ = [
    "ConfigError", "ExperimentConfig", "HarnessError", "ResultTable", "default_config",
    "hybrid_reference", "load", "loads", "localize_once", "run_assoc_sweep", "run_bounds_sweep",
    "run_localization_mc", "run_localize",
]
