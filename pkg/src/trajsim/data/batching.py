"""Padded minibatch construction.

Trajectories longer than the window are chunked; each epoch reshuffles with
its own derived generator, so orders differ across epochs while the window
multiset stays fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Trajectory


@dataclass
class Batch:
    ids: np.ndarray  # (B, T) int64, zero-padded
    mask: np.ndarray  # (B, T) bool

    @property
    def num_transitions(self) -> int:
        m = self.mask
        return int((m[:, 1:] & m[:, :-1]).sum())


def _windows(trajectories: list[Trajectory], t_max: int) -> list[np.ndarray]:
    out = []
    for traj in trajectories:
        locs = traj.locs
        for start in range(0, len(locs), t_max):
            chunk = locs[start : start + t_max]
            if len(chunk):
                out.append(chunk)
    return out


def iter_batches(
    trajectories: list[Trajectory],
    batch_size: int,
    t_max: int,
    rng: np.random.Generator | None = None,
) -> list[Batch]:
    """Batches of padded id windows; unshuffled when ``rng`` is None."""
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    windows = _windows(trajectories, t_max)
    if rng is not None:
        order = rng.permutation(len(windows))
        windows = [windows[i] for i in order]
    batches = []
    for i in range(0, len(windows), batch_size):
        group = windows[i : i + batch_size]
        width = max(len(w) for w in group)
        ids = np.zeros((len(group), width), dtype=np.int64)
        mask = np.zeros((len(group), width), dtype=bool)
        for row, w in enumerate(group):
            ids[row, : len(w)] = w
            mask[row, : len(w)] = True
        batches.append(Batch(ids=ids, mask=mask))
    return batches
