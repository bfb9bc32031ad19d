"""Config loading, experiment execution and artifact writing."""

from .config import ConfigValidationError, RunConfig, load_config, parse_config
from .runner import run, run_one

__all__ = ["ConfigValidationError", "RunConfig", "load_config", "parse_config", "run", "run_one"]
