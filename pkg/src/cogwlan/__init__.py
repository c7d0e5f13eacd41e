"""Saturation throughput of cognitive WLAN nodes that reuse idle WiMAX downlink slots."""

from .analysis import Analysis, analyze
from .config import ConfigError, FrameGeometry, ScenarioConfig, Striping, derive_geometry, read_config
from .simulator import SimResult, simulate

__all__ = ["Analysis", "ConfigError", "FrameGeometry", "ScenarioConfig", "SimResult", "Striping",
           "analyze", "derive_geometry", "read_config", "simulate"]
__version__ = "0.1.0"
