"""Pure-numpy reference implementations of the hot numeric kernels.

This backend is always available and defines the semantics; the numba
backend mirrors it loop-for-loop. Integer-output kernels (``markov_walk``,
``run_lengths``) produce bitwise-identical results on both backends;
floating kernels may differ in the last ulp because numpy reduces with
pairwise summation.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"


def softmax_lastaxis(x: np.ndarray) -> np.ndarray:
    """Row-stabilized softmax over the last axis."""
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_grad_lastaxis(y: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Backward rule for softmax given its output ``y`` and upstream ``g``."""
    dot = (g * y).sum(axis=-1, keepdims=True)
    return y * (g - dot)


def adam_step(
    param: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    step: int,
    lr: float,
    beta1: float,
    beta2: float,
    eps: float,
) -> None:
    """Bias-corrected adam update, in place on flat float64 arrays."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    m_hat = m / (1.0 - beta1**step)
    v_hat = v / (1.0 - beta2**step)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


def markov_walk(
    cum_rows: np.ndarray,
    starts: np.ndarray,
    lengths: np.ndarray,
    uniforms: np.ndarray,
) -> np.ndarray:
    """Sample concatenated Markov-chain walks.

    ``cum_rows`` holds per-state cumulative transition probabilities; random
    draws are supplied in ``uniforms`` (one per non-start step) so both
    backends consume the same stream and agree exactly.
    """
    n = cum_rows.shape[0]
    out = np.empty(int(lengths.sum()), dtype=np.int64)
    pos = 0
    u_idx = 0
    for i in range(starts.shape[0]):
        cur = int(starts[i])
        out[pos] = cur
        pos += 1
        for _ in range(int(lengths[i]) - 1):
            cur = int(np.searchsorted(cum_rows[cur], uniforms[u_idx], side="right"))
            if cur >= n:
                cur = n - 1
            out[pos] = cur
            pos += 1
            u_idx += 1
    return out


def hazard_walk(
    move_cum_rows: np.ndarray,
    stay_probs: np.ndarray,
    starts: np.ndarray,
    lengths: np.ndarray,
    uniforms: np.ndarray,
) -> np.ndarray:
    """Semi-Markov walk: dwell by a run-length hazard, move by a kernel.

    ``stay_probs[r]`` is the probability of repeating the current location
    given it has been held for ``r`` consecutive steps (clamped at the last
    entry). Moves draw from ``move_cum_rows`` (diagonal-free cumulative
    transition rows). Exactly two uniforms are consumed per generated step
    so both backends stay in lockstep.
    """
    n = move_cum_rows.shape[0]
    max_r = stay_probs.shape[0]
    out = np.empty(int(lengths.sum()), dtype=np.int64)
    pos = 0
    u_idx = 0
    for i in range(starts.shape[0]):
        cur = int(starts[i])
        run = 1
        out[pos] = cur
        pos += 1
        for _ in range(int(lengths[i]) - 1):
            u_stay = uniforms[u_idx]
            u_move = uniforms[u_idx + 1]
            u_idx += 2
            r = run - 1 if run - 1 < max_r else max_r - 1
            if u_stay < stay_probs[r]:
                run += 1
            else:
                nxt = int(np.searchsorted(move_cum_rows[cur], u_move, side="right"))
                if nxt >= n:
                    nxt = n - 1
                cur = nxt
                run = 1
            out[pos] = cur
            pos += 1
    return out


def run_lengths(values: np.ndarray) -> np.ndarray:
    """Lengths of maximal runs of equal consecutive values."""
    if values.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    changes = np.flatnonzero(values[1:] != values[:-1])
    bounds = np.concatenate(([-1], changes, [values.shape[0] - 1]))
    return np.diff(bounds).astype(np.int64)
