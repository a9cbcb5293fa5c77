from __future__ import annotations

import numpy as np
import pytest

from trajsim.autodiff import Tape, Tensor


def finite_difference(loss_fn, arrays: list[np.ndarray], step: float = 1e-4) -> list[np.ndarray]:
    """Central finite-difference gradients of a scalar loss.

    ``loss_fn`` takes the arrays (plain numpy) and returns a float; this is
    the independent oracle the analytic backward passes are checked against.
    """
    grads = []
    for target in arrays:
        g = np.zeros_like(target)
        flat = target.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = loss_fn(arrays)
            flat[i] = orig - step
            lo = loss_fn(arrays)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * step)
        grads.append(g)
    return grads


def analytic_grads(build_loss, arrays: list[np.ndarray]) -> list[np.ndarray]:
    """Run the tape once and return gradients in the order of ``arrays``."""
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    with Tape() as tape:
        loss = build_loss(tensors)
    tape.backward(loss)
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max())


def check_gradients(build_loss, arrays, tol, step=1e-4, floor=1e-6):
    """Compare tape gradients against the finite-difference oracle."""

    def loss_value(arrs):
        tensors = [Tensor(a, requires_grad=False) for a in arrs]
        return build_loss(tensors).item()

    analytic = analytic_grads(build_loss, arrays)
    numeric = finite_difference(loss_value, arrays, step=step)
    worst = max(max_rel_error(a, n, floor) for a, n in zip(analytic, numeric))
    assert worst <= tol, f"gradient mismatch: max relative error {worst:.3e} > {tol}"
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
