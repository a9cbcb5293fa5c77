"""Cross-city trajectory simulation toolkit."""

__version__ = "0.1.0"

from .autodiff import Optimizer, Tape, Tensor
from .model import ModelConfig, ParameterSet, TrajectoryTransformer

__all__ = [
    "ModelConfig",
    "Optimizer",
    "ParameterSet",
    "Tape",
    "Tensor",
    "TrajectoryTransformer",
    "__version__",
]
