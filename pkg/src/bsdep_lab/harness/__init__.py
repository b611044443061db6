"""Configs, experiment runs and the command line."""

from .config import DEFAULTS, KINDS, SCHEMA, ConfigError, ExperimentConfig, parse_config
from .runner import Check, RunError, RunManifest, run_experiment, write_solution_csv

__all__ = ["DEFAULTS", "KINDS", "SCHEMA", "ConfigError", "ExperimentConfig", "parse_config", "Check", "RunError",
           "RunManifest", "run_experiment", "write_solution_csv"]
