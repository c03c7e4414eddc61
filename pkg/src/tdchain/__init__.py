"""Simulator and protocol library for a storage-backed proof-of-stake chain."""

from .config import NodeBehavior, ScenarioConfig, inject_adversary
from .sim import Scenario, run_scenario

__version__ = "0.1.0"

__all__ = ["NodeBehavior", "ScenarioConfig", "Scenario", "inject_adversary", "run_scenario"]
