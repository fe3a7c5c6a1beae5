"""Warfarin dosing via deep Q-learning on a simulated PK/PD patient cohort."""

from .cohort import (PatientProfile, Sensitivity, classify_sensitivity,
                     generate_cohort, load_cohort, save_cohort)
from .environment import DOSE_GRID, Environment, Trajectory, build_schedule, reward
from .metrics import pttr_daily, pttr_rosendaal
from .pkpd import Cyp2c9, Engine, EngineConfig, PkpdParameters, Vkorc1
from .protocols import BASELINE_NAMES, run_composite

__version__ = "0.1.0"

__all__ = [
    "BASELINE_NAMES", "Cyp2c9", "DOSE_GRID", "Engine", "EngineConfig",
    "Environment", "PatientProfile", "PkpdParameters", "Sensitivity",
    "Trajectory", "Vkorc1", "build_schedule", "classify_sensitivity",
    "generate_cohort", "load_cohort", "pttr_daily", "pttr_rosendaal",
    "reward", "run_composite", "save_cohort",
]
