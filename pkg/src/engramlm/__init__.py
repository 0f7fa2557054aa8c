"""Desk-scale language-model training stack with a hashed n-gram memory layer."""

__version__ = "0.1.0"

from .backbone import ModelConfig, ModelParams, desk_config, full_1p2b_config, init_params
from .engram import EngramConfig

__all__ = [
    "ModelConfig",
    "ModelParams",
    "EngramConfig",
    "desk_config",
    "full_1p2b_config",
    "init_params",
    "__version__",
]
