"""Scenario configuration, Monte-Carlo sweeps, CSV output and the CLI."""

from .casestudy import (Calibration, SweepResult, calibrate_snr, closed_form_delay_crb,
                        first_delay_crb, run_case_study)
from .config import ConfigError, ScenarioConfig, default_config, load_config, parse_config
from .io import emit_csv, read_csv
from .localization import run_bound_map, simulate

__all__ = ["Calibration", "SweepResult", "calibrate_snr", "closed_form_delay_crb",
           "first_delay_crb", "run_case_study", "ConfigError", "ScenarioConfig",
           "default_config", "load_config", "parse_config", "emit_csv", "read_csv",
           "run_bound_map", "simulate"]
