"""Dense float64 tensors on an explicit reverse-mode tape.

The engine is deliberately small: tensors wrap a numpy array plus an
optional gradient buffer, and a :class:`Tape` records one backward closure
per differentiable operation executed inside its ``with`` block. Backward
replays the closures in exact reverse recording order and *adds into*
gradient buffers, so reused tensors accumulate correctly. Without an active
tape every operation is a plain forward computation, which is what the
sampler uses.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


class Tensor:
    """A dense float64 value with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data: np.ndarray = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match tensor shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


_tape_stack: list["Tape"] = []


class Tape:
    """Ordered record of the backward rules of one forward pass."""

    def __init__(self):
        self._steps: list[Callable[[], None]] = []

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        popped = _tape_stack.pop()
        assert popped is self
        return False

    def __len__(self) -> int:
        return len(self._steps)

    def record(self, backward_step: Callable[[], None]) -> None:
        self._steps.append(backward_step)

    def backward(self, out: Tensor, seed: float = 1.0) -> None:
        """Seed ``out`` with ``d(result)/d(out) = seed`` and replay in reverse.

        ``seed`` other than 1 scales every gradient, which callers use to
        form exact weighted averages over minibatches.
        """
        if out.data.size != 1:
            raise ValueError(f"backward expects a scalar, got shape {out.data.shape}")
        out.accumulate_grad(np.full(out.data.shape, float(seed)))
        for step in reversed(self._steps):
            step()


def current_tape() -> Tape | None:
    return _tape_stack[-1] if _tape_stack else None
