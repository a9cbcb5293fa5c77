"""Check-in log ingestion.

Raw input is delimited text (tab preferred, comma accepted), one record per
line: ``user_id, ISO-8601 timestamp, latitude, longitude, location_key``.
Timestamps are discretized to hourly slots, duplicate visits inside one slot
keep the first record, and user-days with fewer than six surviving records
are dropped. The vocabulary covers surviving locations only, with dense ids
assigned by first appearance in (user, day) order so that re-ingesting a
dataset's own exported records reproduces it exactly.
"""

from __future__ import annotations

import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable

import numpy as np

from ..seeding import derive_rng
from .corpus import CityDataset, DataError, LocationVocabulary, Trajectory, build_dataset

logger = logging.getLogger(__name__)

MIN_VISITS_PER_DAY = 6


class IngestionError(DataError):
    pass


def _parse_timestamp(text: str) -> float:
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _parse_line(line: str) -> tuple[str, float, float, float, str]:
    sep = "\t" if "\t" in line else ","
    parts = [p.strip() for p in line.rstrip("\n").split(sep)]
    if len(parts) != 5:
        raise ValueError(f"expected 5 fields, got {len(parts)}")
    user, ts, lat_s, lon_s, key = parts
    lat, lon = float(lat_s), float(lon_s)
    if not (abs(lat) <= 90.0 and abs(lon) <= 180.0):
        raise ValueError(f"coordinates out of range: {lat}, {lon}")
    return user, _parse_timestamp(ts), lat, lon, key


def ingest(
    records: Iterable[str] | str | Path,
    name: str,
    seed: int,
    epsilon: float = 1.0,
) -> CityDataset:
    """Parse, discretize, filter and split a raw check-in stream."""
    if isinstance(records, (str, Path)):
        records = Path(records).read_text(encoding="utf-8").splitlines()
    rows = []
    skipped = 0
    for lineno, line in enumerate(records, start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            user, epoch, lat, lon, key = _parse_line(line)
        except ValueError as exc:
            skipped += 1
            logger.warning("skipping malformed record on line %d: %s", lineno, exc)
            continue
        rows.append((user, int(epoch // 3600), lat, lon, key))
    if skipped:
        logger.warning("skipped %d malformed record(s)", skipped)

    # group by user-day, keep the first record per slot, drop short days
    by_day: dict[tuple[str, int], dict[int, tuple[float, float, str]]] = {}
    for user, slot, lat, lon, key in rows:
        day_visits = by_day.setdefault((user, slot // 24), {})
        if slot not in day_visits:
            day_visits[slot] = (lat, lon, key)
    kept = {
        day: visits for day, visits in by_day.items() if len(visits) >= MIN_VISITS_PER_DAY
    }
    if not kept:
        raise IngestionError(f"{name}: no user-day with >= {MIN_VISITS_PER_DAY} visits survived")

    key_to_id: dict[str, int] = {}
    coords: list[tuple[float, float]] = []
    trajectories: list[Trajectory] = []
    for user, day in sorted(kept):
        visits = kept[(user, day)]
        slots = sorted(visits)
        locs = []
        for slot in slots:
            lat, lon, key = visits[slot]
            if key not in key_to_id:
                key_to_id[key] = len(coords)
                coords.append((lat, lon))
            locs.append(key_to_id[key])
        trajectories.append(Trajectory(user=user, slots=np.array(slots), locs=np.array(locs)))

    vocab = LocationVocabulary(
        keys=tuple(key_to_id),
        lats=np.array([c[0] for c in coords]),
        lons=np.array([c[1] for c in coords]),
    )
    return build_dataset(
        name,
        vocab,
        trajectories,
        derive_rng(seed, "ingest-split", name),
        epsilon=epsilon,
        extra={"source": "ingest", "seed": seed},
    )


def export_raw(ds: CityDataset) -> list[str]:
    """Render a dataset back into raw record lines (slot start used as time)."""
    lines = []
    for traj in ds.all_trajectories():
        for slot, loc in zip(traj.slots.tolist(), traj.locs.tolist()):
            ts = datetime.fromtimestamp(slot * 3600, tz=timezone.utc)
            lines.append(
                f"{traj.user}\t{ts.strftime('%Y-%m-%dT%H:%M:%S+00:00')}\t"
                f"{float(ds.vocab.lats[loc])!r}\t{float(ds.vocab.lons[loc])!r}\t{ds.vocab.keys[loc]}"
            )
    return lines
