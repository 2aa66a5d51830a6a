"""Predicted-occupancy grids from multi-hypothesis simulation, and a per-cell
random-forest estimator that learns them from augmented occupancy grids."""

from .errors import ConfigError, PogridError

__version__ = "0.1.0"

__all__ = ["ConfigError", "PogridError", "__version__"]
