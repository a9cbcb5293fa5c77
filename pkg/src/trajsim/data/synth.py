"""Synthetic city generation.

Locations sit on a jittered grid with real coordinates; stationary visit
weights follow a rank power law, and day trajectories are sampled from a
distance-decaying Markov kernel biased toward popular locations. A large
decay length relative to the grid keeps the realized rank-frequency
exponent close to the configured one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import _kernels as kernels
from ..seeding import derive_rng
from .corpus import CityDataset, DataError, LocationVocabulary, Trajectory, build_dataset
from .geo import haversine_km


@dataclass(frozen=True)
class SynthSpec:
    n_locations: int
    num_users: int
    days: int = 2
    zipf_exponent: float = 1.2
    seed: int = 0
    grid_extent_km: float = 20.0
    decay_km: float = 12.0
    stay_weight: float = 2.0
    min_steps: int = 6
    max_steps: int = 24
    center_lat: float = 40.0
    center_lon: float = 116.4
    # Optional run-length dwell profile: stay probability after holding a
    # location for 1, 2, ... steps (last entry repeats). None keeps the
    # memoryless kernel with its diagonal stay weight.
    dwell_hazard: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.n_locations < 2:
            raise DataError("n_locations must be at least 2")
        if self.zipf_exponent <= 0:
            raise DataError("zipf_exponent must be positive")
        if self.num_users < 1 or self.days < 1:
            raise DataError("num_users and days must be positive")
        if not 1 <= self.min_steps <= self.max_steps <= 24:
            raise DataError("need 1 <= min_steps <= max_steps <= 24")
        if self.grid_extent_km <= 0 or self.decay_km <= 0:
            raise DataError("grid_extent_km and decay_km must be positive")
        if self.dwell_hazard is not None:
            probs = np.asarray(self.dwell_hazard, dtype=np.float64)
            if probs.ndim != 1 or probs.size == 0 or (probs < 0).any() or (probs >= 1).any():
                raise DataError("dwell_hazard must be stay probabilities in [0, 1)")


def _grid_coordinates(spec: SynthSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    side = math.ceil(math.sqrt(spec.n_locations))
    cell_km = spec.grid_extent_km / side
    rows, cols = np.divmod(np.arange(spec.n_locations), side)
    jitter = rng.uniform(-0.3, 0.3, size=(spec.n_locations, 2))
    lat_per_km = 1.0 / 111.32
    lon_per_km = 1.0 / (111.32 * math.cos(math.radians(spec.center_lat)))
    offs_r = (rows - side / 2 + jitter[:, 0]) * cell_km
    offs_c = (cols - side / 2 + jitter[:, 1]) * cell_km
    lats = spec.center_lat + offs_r * lat_per_km
    lons = spec.center_lon + offs_c * lon_per_km
    # popularity rank equals location id, so shuffle the geometry instead
    order = rng.permutation(spec.n_locations)
    return lats[order], lons[order]


def _transition_cumulative(
    lats: np.ndarray, lons: np.ndarray, base_probs: np.ndarray, spec: SynthSpec
) -> np.ndarray:
    dist = haversine_km(
        lats[:, None], lons[:, None], lats[None, :], lons[None, :]
    )
    kernel = base_probs[None, :] * np.exp(-dist / spec.decay_km)
    if spec.dwell_hazard is None:
        kernel[np.diag_indices_from(kernel)] *= spec.stay_weight
    else:
        # dwelling is handled by the hazard; moves never self-loop
        kernel[np.diag_indices_from(kernel)] = 0.0
    kernel /= kernel.sum(axis=1, keepdims=True)
    return np.cumsum(kernel, axis=1)


def relabeled_split_pair(
    base: CityDataset,
    target_users: int,
    relabel_seed: int,
    source_name: str = "source",
    target_name: str = "target",
    epsilon: float = 1.0,
) -> tuple[CityDataset, CityDataset]:
    """Split one city by user into a data-rich source and a scarce target.

    The last ``target_users`` users become the target city, whose location
    ids are permuted (coordinates move with their location), so the two
    cities share dynamics while their id spaces are unrelated. Each side is
    re-split 7:1:2 on its own.
    """
    users = sorted({t.user for t in base.all_trajectories()})
    if not 0 < target_users < len(users):
        raise DataError(f"target_users must be in (0, {len(users)})")
    target_set = set(users[-target_users:])
    src_trajs = [t for t in base.all_trajectories() if t.user not in target_set]
    tgt_trajs = [t for t in base.all_trajectories() if t.user in target_set]

    n = base.vocab.size
    perm = derive_rng(relabel_seed, "relabel", target_name).permutation(n)
    inverse = np.empty(n, dtype=np.int64)
    inverse[perm] = np.arange(n)
    tgt_trajs = [
        Trajectory(user=t.user, slots=t.slots, locs=perm[t.locs]) for t in tgt_trajs
    ]
    tgt_vocab = LocationVocabulary(
        keys=tuple(base.vocab.keys[inverse[i]] for i in range(n)),
        lats=base.vocab.lats[inverse],
        lons=base.vocab.lons[inverse],
    )
    source = build_dataset(
        source_name,
        base.vocab,
        src_trajs,
        derive_rng(relabel_seed, "pair-split", source_name),
        epsilon=epsilon,
        extra={"source": "pair", "role": "source"},
    )
    target = build_dataset(
        target_name,
        tgt_vocab,
        tgt_trajs,
        derive_rng(relabel_seed, "pair-split", target_name),
        epsilon=epsilon,
        extra={"source": "pair", "role": "target"},
    )
    return source, target


def synth_city(name: str, spec: SynthSpec, epsilon: float = 1.0) -> CityDataset:
    """Generate a full city dataset from a spec; same spec, same corpus."""
    n = spec.n_locations
    place_rng = derive_rng(spec.seed, "synth-place", name)
    walk_rng = derive_rng(spec.seed, "synth-walk", name)

    lats, lons = _grid_coordinates(spec, place_rng)
    ranks = np.arange(1, n + 1, dtype=np.float64)
    base_probs = ranks ** (-spec.zipf_exponent)
    base_probs /= base_probs.sum()
    cum_rows = _transition_cumulative(lats, lons, base_probs, spec)

    n_traj = spec.num_users * spec.days
    lengths = walk_rng.integers(spec.min_steps, spec.max_steps + 1, size=n_traj)
    start_hours = walk_rng.integers(0, 24 - lengths + 1)
    cum_base = np.cumsum(base_probs)
    starts = np.searchsorted(cum_base, walk_rng.random(n_traj), side="right")
    starts = np.minimum(starts, n - 1).astype(np.int64)

    if spec.dwell_hazard is None:
        uniforms = walk_rng.random(int(lengths.sum() - n_traj))
        visited = kernels.markov_walk(cum_rows, starts, lengths.astype(np.int64), uniforms)
    else:
        uniforms = walk_rng.random(2 * int(lengths.sum() - n_traj))
        visited = kernels.hazard_walk(
            cum_rows,
            np.asarray(spec.dwell_hazard, dtype=np.float64),
            starts,
            lengths.astype(np.int64),
            uniforms,
        )

    # restrict the vocabulary to locations that actually occur, keeping rank order
    used = np.unique(visited)
    remap = np.full(n, -1, dtype=np.int64)
    remap[used] = np.arange(used.size)
    visited = remap[visited]
    vocab = LocationVocabulary(
        keys=tuple(f"loc_{int(i):05d}" for i in used),
        lats=lats[used],
        lons=lons[used],
    )

    trajectories = []
    offset = 0
    for idx in range(n_traj):
        user = idx // spec.days
        day = idx % spec.days
        length = int(lengths[idx])
        slots = day * 24 + start_hours[idx] + np.arange(length)
        trajectories.append(
            Trajectory(
                user=f"u{user:05d}",
                slots=slots.astype(np.int64),
                locs=visited[offset : offset + length],
            )
        )
        offset += length

    return build_dataset(
        name,
        vocab,
        trajectories,
        derive_rng(spec.seed, "synth-split", name),
        epsilon=epsilon,
        extra={"source": "synth", "seed": spec.seed, "zipf_exponent": spec.zipf_exponent},
    )
