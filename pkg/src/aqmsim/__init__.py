"""Discrete-event simulator for AQM, flow isolation and adaptive streaming QoE."""

from .engine import Simulator
from .topology import ConfigError, Network, build

__version__ = "0.1.0"

__all__ = ["ConfigError", "Network", "Simulator", "build", "__version__"]
