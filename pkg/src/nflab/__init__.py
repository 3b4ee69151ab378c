"""Periodic pseudo-spectral simulation of simplified nematic liquid crystal flow."""
from .errors import *  # noqa: F401,F403
from .grid import FlowState, PeriodicGrid, preset_field
from .dynamics import SchemeConfig, Trajectory, simulate, step

__all__ = ["FlowState", "PeriodicGrid", "preset_field", "SchemeConfig", "Trajectory", "simulate", "step"]
__version__ = "0.1.0"
