from .config import ScenarioConfig, load_scenario, parse_scenario
from .runner import ROW_FIELDS, World, encode_metrics, run_scenario

__all__ = ["ROW_FIELDS", "ScenarioConfig", "World", "encode_metrics", "load_scenario", "parse_scenario", "run_scenario"]
