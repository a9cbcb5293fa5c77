"""Corpus types and their diff-friendly on-disk form.

A trajectory is one user-day: strictly increasing hourly slot indices paired
with dense location ids. A city dataset bundles a coordinate vocabulary,
7:1:2 train/valid/test splits and the train-split visit frequencies.

Serialized layout (one directory per dataset): ``vocabulary.tsv`` (id, key,
lat, lon), ``train.tsv``/``valid.tsv``/``test.tsv`` (user, slot,
location_id), ``frequency.tsv`` and ``meta.json``. Floats are written with
``repr`` so files round-trip bit-exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPLIT_NAMES = ("train", "valid", "test")
SPLIT_RATIO = (0.7, 0.1, 0.2)


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class LocationVocabulary:
    keys: tuple[str, ...]
    lats: np.ndarray
    lons: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lats", np.asarray(self.lats, dtype=np.float64))
        object.__setattr__(self, "lons", np.asarray(self.lons, dtype=np.float64))
        n = len(self.keys)
        if self.lats.shape != (n,) or self.lons.shape != (n,):
            raise DataError("vocabulary keys and coordinates disagree in length")
        if n and (not np.isfinite(self.lats).all() or not np.isfinite(self.lons).all()):
            raise DataError("vocabulary coordinates must be finite")
        if n and (np.abs(self.lats).max() > 90.0 or np.abs(self.lons).max() > 180.0):
            raise DataError("vocabulary coordinates out of lat/lon range")

    @property
    def size(self) -> int:
        return len(self.keys)


@dataclass
class Trajectory:
    user: str
    slots: np.ndarray
    locs: np.ndarray

    def __post_init__(self):
        self.slots = np.asarray(self.slots, dtype=np.int64)
        self.locs = np.asarray(self.locs, dtype=np.int64)
        if self.slots.shape != self.locs.shape or self.slots.ndim != 1:
            raise DataError("trajectory slots and locations must be equal-length vectors")
        if len(self.slots) > 1 and not (np.diff(self.slots) > 0).all():
            raise DataError("trajectory slot indices must be strictly increasing")

    def __len__(self) -> int:
        return len(self.slots)

    def days(self) -> np.ndarray:
        return self.slots // 24


@dataclass(frozen=True)
class FrequencyProfile:
    probs: np.ndarray
    epsilon: float

    def __post_init__(self):
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=np.float64))
        if self.probs.ndim != 1 or self.probs.size == 0:
            raise DataError("frequency profile must be a nonempty vector")
        if (self.probs < 0).any():
            raise DataError("frequency profile must be nonnegative")
        if abs(self.probs.sum() - 1.0) > 1e-12:
            raise DataError("frequency profile must sum to 1")


@dataclass
class CityDataset:
    name: str
    vocab: LocationVocabulary
    train: list[Trajectory]
    valid: list[Trajectory]
    test: list[Trajectory]
    frequencies: FrequencyProfile
    extra: dict = field(default_factory=dict)

    def split(self, which: str) -> list[Trajectory]:
        if which not in SPLIT_NAMES:
            raise DataError(f"unknown split {which!r}")
        return getattr(self, which)

    def all_trajectories(self) -> list[Trajectory]:
        return self.train + self.valid + self.test


def frequency_profile(
    trajectories: list[Trajectory], n_locations: int, epsilon: float = 1.0
) -> FrequencyProfile:
    """Smoothed empirical visit frequencies over the vocabulary.

    ``(count_i + epsilon) / (total + n * epsilon)``; the default add-one
    smoothing guarantees strictly positive mass everywhere, which downstream
    exponentiation requires.
    """
    if n_locations < 1:
        raise DataError("n_locations must be positive")
    counts = np.zeros(n_locations, dtype=np.float64)
    for traj in trajectories:
        counts += np.bincount(traj.locs, minlength=n_locations)
    total = counts.sum()
    probs = (counts + epsilon) / (total + n_locations * epsilon)
    return FrequencyProfile(probs=probs, epsilon=epsilon)


def split_sizes(n: int) -> tuple[int, int, int]:
    n_train = math.floor(n * SPLIT_RATIO[0])
    n_valid = math.floor(n * SPLIT_RATIO[1])
    return n_train, n_valid, n - n_train - n_valid


def split_trajectories(
    trajectories: list[Trajectory], rng: np.random.Generator
) -> tuple[list[Trajectory], list[Trajectory], list[Trajectory]]:
    order = rng.permutation(len(trajectories))
    shuffled = [trajectories[i] for i in order]
    n_train, n_valid, _ = split_sizes(len(trajectories))
    return (
        shuffled[:n_train],
        shuffled[n_train : n_train + n_valid],
        shuffled[n_train + n_valid :],
    )


def build_dataset(
    name: str,
    vocab: LocationVocabulary,
    trajectories: list[Trajectory],
    rng: np.random.Generator,
    epsilon: float = 1.0,
    extra: dict | None = None,
) -> CityDataset:
    train, valid, test = split_trajectories(trajectories, rng)
    freq = frequency_profile(train, vocab.size, epsilon)
    return CityDataset(
        name=name,
        vocab=vocab,
        train=train,
        valid=valid,
        test=test,
        frequencies=freq,
        extra=dict(extra or {}),
    )


# -- serialization -----------------------------------------------------------


def write_split_file(path: Path, trajectories: list[Trajectory]) -> None:
    lines = ["user\tslot\tlocation_id\n"]
    for traj in trajectories:
        for slot, loc in zip(traj.slots.tolist(), traj.locs.tolist()):
            lines.append(f"{traj.user}\t{slot}\t{loc}\n")
    path.write_text("".join(lines), encoding="utf-8")


def read_split_file(path: Path) -> list[Trajectory]:
    trajectories: list[Trajectory] = []
    cur_key: tuple[str, int] | None = None
    slots: list[int] = []
    locs: list[int] = []

    def flush():
        if cur_key is not None:
            trajectories.append(
                Trajectory(user=cur_key[0], slots=np.array(slots), locs=np.array(locs))
            )

    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            user, slot_s, loc_s = line.rstrip("\n").split("\t")
            slot, loc = int(slot_s), int(loc_s)
            key = (user, slot // 24)
            if key != cur_key:
                flush()
                cur_key, slots, locs = key, [], []
            slots.append(slot)
            locs.append(loc)
    flush()
    return trajectories


def save_dataset(ds: CityDataset, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    vocab_lines = ["id\tkey\tlat\tlon\n"]
    for i, key in enumerate(ds.vocab.keys):
        vocab_lines.append(f"{i}\t{key}\t{float(ds.vocab.lats[i])!r}\t{float(ds.vocab.lons[i])!r}\n")
    (directory / "vocabulary.tsv").write_text("".join(vocab_lines), encoding="utf-8")
    for split in SPLIT_NAMES:
        write_split_file(directory / f"{split}.tsv", ds.split(split))
    freq_lines = [f"# epsilon={ds.frequencies.epsilon!r}\n", "id\tprob\n"]
    for i, p in enumerate(ds.frequencies.probs.tolist()):
        freq_lines.append(f"{i}\t{p!r}\n")
    (directory / "frequency.tsv").write_text("".join(freq_lines), encoding="utf-8")
    meta = {
        "name": ds.name,
        "n_locations": ds.vocab.size,
        "split_sizes": {s: len(ds.split(s)) for s in SPLIT_NAMES},
        "extra": ds.extra,
    }
    (directory / "meta.json").write_text(
        json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def load_dataset(directory) -> CityDataset:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text(encoding="utf-8"))
    keys: list[str] = []
    lats: list[float] = []
    lons: list[float] = []
    with open(directory / "vocabulary.tsv", encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            _, key, lat, lon = line.rstrip("\n").split("\t")
            keys.append(key)
            lats.append(float(lat))
            lons.append(float(lon))
    vocab = LocationVocabulary(keys=tuple(keys), lats=np.array(lats), lons=np.array(lons))
    splits = {s: read_split_file(directory / f"{s}.tsv") for s in SPLIT_NAMES}
    with open(directory / "frequency.tsv", encoding="utf-8") as fh:
        eps_line = next(fh)
        epsilon = float(eps_line.strip().split("=", 1)[1])
        next(fh)
        probs = [float(line.rstrip("\n").split("\t")[1]) for line in fh]
    return CityDataset(
        name=meta["name"],
        vocab=vocab,
        train=splits["train"],
        valid=splits["valid"],
        test=splits["test"],
        frequencies=FrequencyProfile(probs=np.array(probs), epsilon=epsilon),
        extra=meta.get("extra", {}),
    )
