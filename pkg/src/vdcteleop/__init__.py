"""Virtual-decomposition bilateral teleoperation: models, channel, stability and simulation."""

from .channel import ChannelConfig, ConfigError
from .config import ScenarioConfig, apply_overrides, experiment_preset, load_ini
from .sim import SimulationAbort, TraceLog, monitors, read_csv, run_scenario, summarize, write_csv

__version__ = "0.1.0"

__all__ = [
    "ChannelConfig", "ConfigError", "ScenarioConfig", "apply_overrides", "experiment_preset",
    "load_ini", "SimulationAbort", "TraceLog", "monitors", "read_csv", "run_scenario",
    "summarize", "write_csv",
]
