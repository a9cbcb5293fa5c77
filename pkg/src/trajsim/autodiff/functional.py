"""Differentiable operations.

Each operation computes its forward value eagerly and, when a tape is active
and some input requires a gradient, records a closure implementing its
backward rule. Closures read ``out.grad`` lazily so branches that never
reach the loss are skipped.

Broadcasting is supported only where the model needs it (bias addition and
constant masks); everything else checks shapes strictly.
"""

from __future__ import annotations

import numpy as np

from .. import _kernels as kernels
from .tensor import Tensor, current_tape


def _make_output(data: np.ndarray, *inputs: Tensor) -> tuple[Tensor, bool]:
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires)
    record = requires and current_tape() is not None
    return out, record


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; stacked on leading axes, or 2-D weight on the right."""
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ValueError(f"matmul expects >=2-D operands, got {ad.shape} @ {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ValueError(f"matmul inner dimension mismatch: {ad.shape} @ {bd.shape}")
    if bd.ndim > 2 and ad.shape[:-2] != bd.shape[:-2]:
        raise ValueError(f"matmul batch dimension mismatch: {ad.shape} @ {bd.shape}")
    out, record = _make_output(ad @ bd, a, b)
    if record:

        def _backward():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a.accumulate_grad(g @ np.swapaxes(bd, -1, -2))
            if b.requires_grad:
                if bd.ndim == 2 and ad.ndim > 2:
                    k, n = bd.shape
                    gb = ad.reshape(-1, k).T @ g.reshape(-1, n)
                else:
                    gb = np.swapaxes(ad, -1, -2) @ g
                b.accumulate_grad(gb)

        current_tape().record(_backward)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    out, record = _make_output(a.data + b.data, a, b)
    if record:

        def _backward():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(g, b.data.shape))

        current_tape().record(_backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    out, record = _make_output(ad * bd, a, b)
    if record:

        def _backward():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(g * bd, a.data.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(g * ad, b.data.shape))

        current_tape().record(_backward)
    return out


def scale(a: Tensor, factor: float) -> Tensor:
    out, record = _make_output(a.data * factor, a)
    if record:

        def _backward():
            g = out.grad
            if g is not None:
                a.accumulate_grad(g * factor)

        current_tape().record(_backward)
    return out


def add_constant(a: Tensor, constant: np.ndarray) -> Tensor:
    """Add a non-differentiable array (e.g. an additive attention mask)."""
    out, record = _make_output(a.data + constant, a)
    if record:

        def _backward():
            g = out.grad
            if g is not None:
                a.accumulate_grad(_unbroadcast(g, a.data.shape))

        current_tape().record(_backward)
    return out


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    out, record = _make_output(np.where(mask, a.data, 0.0), a)
    if record:

        def _backward():
            g = out.grad
            if g is not None:
                a.accumulate_grad(g * mask)

        current_tape().record(_backward)
    return out


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    original = a.data.shape
    out, record = _make_output(a.data.reshape(shape), a)
    if record:

        def _backward():
            g = out.grad
            if g is not None:
                a.accumulate_grad(g.reshape(original))

        current_tape().record(_backward)
    return out


def swapaxes(a: Tensor, axis1: int, axis2: int) -> Tensor:
    out, record = _make_output(np.swapaxes(a.data, axis1, axis2).copy(), a)
    if record:

        def _backward():
            g = out.grad
            if g is not None:
                a.accumulate_grad(np.swapaxes(g, axis1, axis2))

        current_tape().record(_backward)
    return out


def slice_axis1(a: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous slice along axis 1; backward zero-pads."""
    out, record = _make_output(a.data[:, start:stop].copy(), a)
    if record:

        def _backward():
            g = out.grad
            if g is None:
                return
            full = np.zeros_like(a.data)
            full[:, start:stop] = g
            a.accumulate_grad(full)

        current_tape().record(_backward)
    return out


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup; gradients scatter-add into the visited rows only."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise IndexError(
            f"embedding id out of range [0, {table.data.shape[0]}): "
            f"min={ids.min()}, max={ids.max()}"
        )
    out, record = _make_output(table.data[ids], table)
    if record:

        def _backward():
            g = out.grad
            if g is None:
                return
            full = np.zeros_like(table.data)
            np.add.at(full, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
            table.accumulate_grad(full)

        current_tape().record(_backward)
    return out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    moved = np.moveaxis(a.data, axis, -1)
    y = np.moveaxis(kernels.softmax_lastaxis(moved), -1, axis)
    out, record = _make_output(y, a)
    if record:

        def _backward():
            g = out.grad
            if g is None:
                return
            ym = np.moveaxis(out.data, axis, -1)
            gm = np.moveaxis(g, axis, -1)
            da = kernels.softmax_grad_lastaxis(ym, gm)
            a.accumulate_grad(np.moveaxis(da, -1, axis))

        current_tape().record(_backward)
    return out


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance, then affine."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out, record = _make_output(xhat * gain.data + bias.data, a, gain, bias)
    if record:

        def _backward():
            g = out.grad
            if g is None:
                return
            d = x.shape[-1]
            if gain.requires_grad:
                gain.accumulate_grad((g * xhat).reshape(-1, d).sum(axis=0))
            if bias.requires_grad:
                bias.accumulate_grad(g.reshape(-1, d).sum(axis=0))
            if a.requires_grad:
                gd = g * gain.data
                term = gd - gd.mean(axis=-1, keepdims=True)
                term -= xhat * (gd * xhat).mean(axis=-1, keepdims=True)
                a.accumulate_grad(term * inv)

        current_tape().record(_backward)
    return out


def cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean negative log-likelihood over the masked positions.

    ``logits`` has class scores on the last axis; ``targets`` and ``mask``
    share its leading shape. Positions where ``mask`` is false contribute
    neither to the loss nor to the gradient.
    """
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    x = logits.data
    n_classes = x.shape[-1]
    if targets.shape != x.shape[:-1] or mask.shape != x.shape[:-1]:
        raise ValueError(
            f"targets {targets.shape} / mask {mask.shape} do not match logits {x.shape}"
        )
    masked_targets = targets[mask]
    if masked_targets.size == 0:
        raise ValueError("cross_entropy: no valid prediction positions in mask")
    if masked_targets.min() < 0 or masked_targets.max() >= n_classes:
        raise IndexError(
            f"target id out of range [0, {n_classes}): "
            f"min={masked_targets.min()}, max={masked_targets.max()}"
        )
    safe_targets = np.where(mask, targets, 0)
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    lse = np.log(np.exp(z).sum(axis=-1)) + m[..., 0]
    picked = np.take_along_axis(x, safe_targets[..., None], axis=-1)[..., 0]
    count = int(mask.sum())
    nll = float(((lse - picked) * mask).sum() / count)
    out, record = _make_output(np.asarray(nll), logits)
    if record:

        def _backward():
            g = out.grad
            if g is None:
                return
            probs = kernels.softmax_lastaxis(x)
            flat = probs.reshape(-1, n_classes)
            flat[np.arange(flat.shape[0]), safe_targets.reshape(-1)] -= 1.0
            probs *= (mask / count * float(g.reshape(())))[..., None]
            logits.accumulate_grad(probs)

        current_tape().record(_backward)
    return out


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None or rate is zero."""
    if rng is None or rate <= 0.0:
        return a
    keep = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
    out, record = _make_output(a.data * keep, a)
    if record:

        def _backward():
            g = out.grad
            if g is not None:
                a.accumulate_grad(g * keep)

        current_tape().record(_backward)
    return out


def sum_all(a: Tensor) -> Tensor:
    out, record = _make_output(np.asarray(a.data.sum()), a)
    if record:

        def _backward():
            g = out.grad
            if g is not None:
                a.accumulate_grad(np.full(a.data.shape, float(g.reshape(()))))

        current_tape().record(_backward)
    return out


def tied_logits(h: Tensor, table: Tensor, n_out: int) -> Tensor:
    """Project onto the first ``n_out`` embedding rows (weight tying).

    Shares storage with the embedding table: the output matrix IS the
    table, so gradients from the logits flow into its first ``n_out`` rows.
    """
    w = table.data[:n_out]
    out, record = _make_output(h.data @ w.T, h, table)
    if record:

        def _backward():
            g = out.grad
            if g is None:
                return
            if h.requires_grad:
                h.accumulate_grad(g @ w)
            if table.requires_grad:
                d = table.data.shape[1]
                gt = np.zeros_like(table.data)
                gt[:n_out] = g.reshape(-1, n_out).T @ h.data.reshape(-1, d)
                table.accumulate_grad(gt)

        current_tape().record(_backward)
    return out


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add(matmul(x, w), b)
