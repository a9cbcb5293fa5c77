"""Plain SGD and bias-corrected adam over named parameter collections.

After a step every touched gradient is cleared; accumulation across steps is
the caller's explicit choice, never an accident.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .. import _kernels as kernels
from .tensor import Tensor

KINDS = ("sgd", "adam")


class Optimizer:
    """One optimizer instance per model; adam moments are keyed by name.

    ``learning_rate`` zero is allowed and performs a null step, which the
    tests use to pin down update mechanics.
    """

    def __init__(
        self,
        kind: str,
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        if kind not in KINDS:
            raise ValueError(f"optimizer kind must be one of {KINDS}, got {kind!r}")
        if learning_rate < 0:
            raise ValueError(f"learning rate must be nonnegative, got {learning_rate}")
        self.kind = kind
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.step_count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, named_params: Iterable[tuple[str, Tensor]]) -> None:
        params = list(named_params)
        for name, p in params:
            if p.grad is None:
                raise RuntimeError(f"parameter {name!r} has no accumulated gradient")
        self.step_count += 1
        for name, p in params:
            if self.kind == "sgd":
                p.data -= self.learning_rate * p.grad
            else:
                m = self._m.get(name)
                if m is None:
                    m = self._m[name] = np.zeros_like(p.data)
                    self._v[name] = np.zeros_like(p.data)
                v = self._v[name]
                if m.shape != p.data.shape:
                    raise RuntimeError(
                        f"adam state shape {m.shape} does not match parameter "
                        f"{name!r} shape {p.data.shape}"
                    )
                kernels.adam_step(
                    p.data,
                    p.grad,
                    m,
                    v,
                    self.step_count,
                    self.learning_rate,
                    self.beta1,
                    self.beta2,
                    self.epsilon,
                )
            p.grad = None
