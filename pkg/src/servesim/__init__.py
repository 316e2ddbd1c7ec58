"""Discrete-event simulator of an inference server: preprocessing, transfers,
batched inference and two-stage pipelines, with bounds analysis and calibration."""

from .config import ScenarioConfig, ScenarioError, apply_overrides, load_scenario
from .metrics import RunReport
from .multidnn import run_two_stage
from .pipeline import run_pipeline

__version__ = "0.1.0"

__all__ = [
    "RunReport", "ScenarioConfig", "ScenarioError", "apply_overrides", "load_scenario",
    "run_pipeline", "run_two_stage",
]
