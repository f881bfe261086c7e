"""Mesoscopic traffic simulation with NFD-based toll optimization."""

from .control import ControlConfig
from .plant import SimOutput, run_horizon
from .routing import ChoiceParams
from .scenario import DemandProfile, Scenario, generate_grid, load_scenario, save_scenario
from .tolling import MODELS, TollSchedule

__all__ = [
    "ChoiceParams",
    "ControlConfig",
    "DemandProfile",
    "MODELS",
    "Scenario",
    "SimOutput",
    "TollSchedule",
    "generate_grid",
    "load_scenario",
    "run_horizon",
    "save_scenario",
]
__version__ = "0.1.0"
