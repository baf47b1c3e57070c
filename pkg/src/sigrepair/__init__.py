"""Repair of traffic-signal records in driving scenarios."""

from .config import Config, EstimationParams, FusionParams, PostParams, TopologyParams, load_config
from .pipeline import analyze_scenario, repair_scenario
from .scenario import Scenario, SignalState, parse_scenario, read_scenario, serialize_scenario

__all__ = [
    "Config",
    "EstimationParams",
    "FusionParams",
    "PostParams",
    "TopologyParams",
    "load_config",
    "analyze_scenario",
    "repair_scenario",
    "Scenario",
    "SignalState",
    "parse_scenario",
    "read_scenario",
    "serialize_scenario",
]
