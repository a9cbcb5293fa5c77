from .config import ConfigError, ModelConfig
from .params import (
    ParameterSet,
    RegistryError,
    checkpoint_digest,
    extract_shared,
    init_parameters,
    load_checkpoint,
    save_checkpoint,
)
from .transformer import TrajectoryTransformer, make_model

__all__ = [
    "ConfigError",
    "ModelConfig",
    "ParameterSet",
    "RegistryError",
    "TrajectoryTransformer",
    "checkpoint_digest",
    "extract_shared",
    "init_parameters",
    "load_checkpoint",
    "make_model",
    "save_checkpoint",
]
