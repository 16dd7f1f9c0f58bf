"""Command-line interface: configuration, training loop, benchmark, entry point."""

from .config import ConfigError, TrainConfig, load_config, parse_config, serialize_config
from .train import NumericError, RunResult, run_training
from .main import main

__all__ = [
    "ConfigError",
    "TrainConfig",
    "load_config",
    "parse_config",
    "serialize_config",
    "NumericError",
    "RunResult",
    "run_training",
    "main",
]
