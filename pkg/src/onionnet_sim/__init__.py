"""Discrete-event simulator of an onion-routed P2P botnet and the defences studied against it."""

from .engine import Engine, Event, EventKind, RunMetrics
from .scenario.config import ScenarioConfig, load_scenario, parse_scenario
from .scenario.runner import World, encode_metrics, run_scenario

__all__ = [
    "Engine",
    "Event",
    "EventKind",
    "RunMetrics",
    "ScenarioConfig",
    "World",
    "encode_metrics",
    "load_scenario",
    "parse_scenario",
    "run_scenario",
]

__version__ = "0.1.0"
