"""Numba kernels mirroring the numpy backend.

No ``fastmath`` and no ``parallel``: determinism beats the last bit of
speed here. ``cache=True`` keeps recompilation out of repeated CLI runs.
"""

from __future__ import annotations

import numpy as np
from numba import njit

NAME = "numba"

_OPTS = dict(cache=True, nogil=True)


@njit(**_OPTS)
def _softmax_2d(x):
    out = np.empty_like(x)
    rows, cols = x.shape
    for r in range(rows):
        m = x[r, 0]
        for c in range(1, cols):
            if x[r, c] > m:
                m = x[r, c]
        s = 0.0
        for c in range(cols):
            e = np.exp(x[r, c] - m)
            out[r, c] = e
            s += e
        for c in range(cols):
            out[r, c] /= s
    return out


def softmax_lastaxis(x: np.ndarray) -> np.ndarray:
    flat = np.ascontiguousarray(x).reshape(-1, x.shape[-1])
    return _softmax_2d(flat).reshape(x.shape)


@njit(**_OPTS)
def _softmax_grad_2d(y, g):
    out = np.empty_like(y)
    rows, cols = y.shape
    for r in range(rows):
        dot = 0.0
        for c in range(cols):
            dot += g[r, c] * y[r, c]
        for c in range(cols):
            out[r, c] = y[r, c] * (g[r, c] - dot)
    return out


def softmax_grad_lastaxis(y: np.ndarray, g: np.ndarray) -> np.ndarray:
    cols = y.shape[-1]
    flat = _softmax_grad_2d(
        np.ascontiguousarray(y).reshape(-1, cols),
        np.ascontiguousarray(g).reshape(-1, cols),
    )
    return flat.reshape(y.shape)


@njit(**_OPTS)
def _adam_flat(param, grad, m, v, step, lr, beta1, beta2, eps):
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    for i in range(param.shape[0]):
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * (grad[i] * grad[i])
        param[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)


def adam_step(param, grad, m, v, step, lr, beta1, beta2, eps) -> None:
    _adam_flat(
        param.reshape(-1),
        np.ascontiguousarray(grad).reshape(-1),
        m.reshape(-1),
        v.reshape(-1),
        step,
        lr,
        beta1,
        beta2,
        eps,
    )


@njit(**_OPTS)
def markov_walk(cum_rows, starts, lengths, uniforms):
    n = cum_rows.shape[0]
    total = 0
    for i in range(lengths.shape[0]):
        total += lengths[i]
    out = np.empty(total, dtype=np.int64)
    pos = 0
    u_idx = 0
    for i in range(starts.shape[0]):
        cur = starts[i]
        out[pos] = cur
        pos += 1
        for _ in range(lengths[i] - 1):
            cur = np.searchsorted(cum_rows[cur], uniforms[u_idx], side="right")
            if cur >= n:
                cur = n - 1
            out[pos] = cur
            pos += 1
            u_idx += 1
    return out


@njit(**_OPTS)
def hazard_walk(move_cum_rows, stay_probs, starts, lengths, uniforms):
    n = move_cum_rows.shape[0]
    max_r = stay_probs.shape[0]
    total = 0
    for i in range(lengths.shape[0]):
        total += lengths[i]
    out = np.empty(total, dtype=np.int64)
    pos = 0
    u_idx = 0
    for i in range(starts.shape[0]):
        cur = starts[i]
        run = 1
        out[pos] = cur
        pos += 1
        for _ in range(lengths[i] - 1):
            u_stay = uniforms[u_idx]
            u_move = uniforms[u_idx + 1]
            u_idx += 2
            r = run - 1
            if r >= max_r:
                r = max_r - 1
            if u_stay < stay_probs[r]:
                run += 1
            else:
                nxt = np.searchsorted(move_cum_rows[cur], u_move, side="right")
                if nxt >= n:
                    nxt = n - 1
                cur = nxt
                run = 1
            out[pos] = cur
            pos += 1
    return out


@njit(**_OPTS)
def run_lengths(values):
    n = values.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    count = 1
    for i in range(1, n):
        if values[i] != values[i - 1]:
            count += 1
    out = np.empty(count, dtype=np.int64)
    idx = 0
    run = 1
    for i in range(1, n):
        if values[i] == values[i - 1]:
            run += 1
        else:
            out[idx] = run
            idx += 1
            run = 1
    out[idx] = run
    return out
