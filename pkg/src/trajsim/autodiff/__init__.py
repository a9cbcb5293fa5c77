from .tensor import Tape, Tensor, current_tape
from .optim import Optimizer
from . import functional

__all__ = ["Tape", "Tensor", "current_tape", "Optimizer", "functional"]
