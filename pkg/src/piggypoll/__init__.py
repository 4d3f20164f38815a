"""Performance model and simulator for bandwidth-request polling with piggyback."""

from .core import (
    ConfigError,
    ModelSolution,
    NetworkConfig,
    config_from_dict,
    config_from_json,
    config_from_kv,
    config_to_json,
    config_to_kv,
    load_config,
    validate,
)
from .solver import SolverError, SolverOptions, initializer_spread, residuals, solve

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ModelSolution",
    "NetworkConfig",
    "SolverError",
    "SolverOptions",
    "config_from_dict",
    "config_from_json",
    "config_from_kv",
    "config_to_json",
    "config_to_kv",
    "initializer_spread",
    "load_config",
    "residuals",
    "solve",
    "validate",
]
