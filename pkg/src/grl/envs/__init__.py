"""Benchmark environments."""

from .base import Environment
from .navigation import NavRewards, NavWorld, nav_default_configs, nav_step

__all__ = ["Environment", "NavRewards", "NavWorld", "nav_default_configs", "nav_step"]
