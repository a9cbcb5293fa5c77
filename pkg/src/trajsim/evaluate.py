"""Trajectory distribution metrics and JSD scoring.

Six metrics compare a simulated corpus against a real one: trip distance,
radius of gyration, dwell duration, daily unique-location ratio, and global
and per-trajectory top-location frequency profiles. Each yields a pair of
aligned distributions scored with the Jensen-Shannon divergence under
natural-log entropy, so scores live in [0, ln 2].

Bins are fixed (distance 50 bins over 0-100 km plus an overflow bin, radius
50 over 0-50 km, duration integer bins 1-24, daily ratio 20 over [0, 1]) so
scores are comparable across runs.

The per-trajectory rank metric pairs real and simulated trajectories by
index and reports the mean of the per-pair divergences; this aggregation is
a documented choice of this package.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as kernels
from .data import LocationVocabulary, Trajectory, haversine_km
from .model import TrajectoryTransformer

LN2 = math.log(2.0)

METRIC_NAMES = ("distance", "radius", "duration", "dailyloc", "g_rank", "i_rank")

DISTANCE_EDGES = np.append(np.linspace(0.0, 100.0, 51), np.inf)
RADIUS_EDGES = np.linspace(0.0, 50.0, 51)
DURATION_EDGES = np.arange(1.0, 26.0)
DAILYLOC_EDGES = np.linspace(0.0, 1.0, 21)

RANK_TOP_K = 100
RANK_SMOOTHING = 1e-12


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    masses: np.ndarray
    count: int

    def __post_init__(self):
        object.__setattr__(self, "edges", np.asarray(self.edges, dtype=np.float64))
        object.__setattr__(self, "masses", np.asarray(self.masses, dtype=np.float64))
        if not (np.diff(self.edges) > 0).all():
            raise ValueError("histogram edges must be strictly increasing")
        if self.masses.shape[0] != self.edges.shape[0] - 1:
            raise ValueError("histogram needs len(edges) - 1 masses")
        if (self.masses < 0).any() or abs(self.masses.sum() - 1.0) > 1e-12:
            raise ValueError("histogram masses must be nonnegative and sum to 1")


def build_histogram(values: np.ndarray, edges: np.ndarray) -> Histogram:
    """Normalized histogram; values beyond the range land in the end bins."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot histogram an empty sample")
    finite_hi = edges[-2] if np.isinf(edges[-1]) else edges[-1]
    clipped = np.clip(values, edges[0], finite_hi)
    if np.isinf(edges[-1]):
        # route anything past the finite range into the overflow bin
        clipped = np.where(values > finite_hi, finite_hi * 1.5, clipped)
    counts, _ = np.histogram(clipped, bins=np.where(np.isinf(edges), finite_hi * 2, edges))
    return Histogram(edges=edges, masses=counts / counts.sum(), count=int(values.size))


def jsd(p: np.ndarray, q: np.ndarray) -> float:
    """Jensen-Shannon divergence with natural-log entropy, 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"distribution lengths differ: {p.shape} vs {q.shape}")

    def entropy(x):
        nz = x[x > 0]
        return float(-(nz * np.log(nz)).sum())

    return entropy((p + q) / 2.0) - (entropy(p) + entropy(q)) / 2.0


# -- per-corpus statistics ----------------------------------------------------


def trip_distances_km(corpus: list[Trajectory], vocab: LocationVocabulary) -> np.ndarray:
    """Distances between consecutive visits, pooled over all trajectories."""
    chunks = []
    for traj in corpus:
        if len(traj) < 2:
            continue
        a, b = traj.locs[:-1], traj.locs[1:]
        chunks.append(haversine_km(vocab.lats[a], vocab.lons[a], vocab.lats[b], vocab.lons[b]))
    if not chunks:
        raise ValueError("corpus has no consecutive visit pairs")
    return np.concatenate(chunks)


def gyration_radii_km(corpus: list[Trajectory], vocab: LocationVocabulary) -> np.ndarray:
    """Per trajectory: RMS distance of visits to the mean coordinate."""
    if not corpus:
        raise ValueError("corpus is empty")
    out = np.empty(len(corpus))
    for i, traj in enumerate(corpus):
        lats = vocab.lats[traj.locs]
        lons = vocab.lons[traj.locs]
        d = haversine_km(lats, lons, lats.mean(), lons.mean())
        out[i] = math.sqrt(float((d * d).mean()))
    return out


def dwell_durations(corpus: list[Trajectory]) -> np.ndarray:
    """Run lengths of consecutive identical locations, in hours."""
    if not corpus:
        raise ValueError("corpus is empty")
    return np.concatenate([kernels.run_lengths(traj.locs) for traj in corpus])


def daily_location_ratios(corpus: list[Trajectory]) -> np.ndarray:
    """Per trajectory-day: unique locations divided by day length."""
    if not corpus:
        raise ValueError("corpus is empty")
    ratios = []
    for traj in corpus:
        days = traj.days()
        for day in np.unique(days):
            locs = traj.locs[days == day]
            ratios.append(len(np.unique(locs)) / len(locs))
    return np.asarray(ratios)


def _visit_counts(corpus: list[Trajectory], n: int) -> np.ndarray:
    counts = np.zeros(n, dtype=np.float64)
    for traj in corpus:
        counts += np.bincount(traj.locs, minlength=n)
    return counts


def rank_distributions(
    real: list[Trajectory], sim: list[Trajectory], n_locations: int, top_k: int = RANK_TOP_K
) -> tuple[np.ndarray, np.ndarray]:
    """Aligned (real, sim) frequency distributions over the real top-k ids.

    The simulated side gets a tiny smoothing mass so the pair stays a valid
    distribution even when it misses a top location entirely.
    """
    real_counts = _visit_counts(real, n_locations)
    sim_counts = _visit_counts(sim, n_locations)
    k = min(top_k, n_locations)
    top = np.argsort(-real_counts, kind="stable")[:k]
    p = real_counts[top]
    p = p / p.sum()
    q = sim_counts[top] + RANK_SMOOTHING
    q = q / q.sum()
    return p, q


def per_trajectory_rank_jsd(
    real: Trajectory, sim: Trajectory, n_locations: int, top_k: int = RANK_TOP_K
) -> float:
    support = len(np.unique(real.locs))
    return jsd(*rank_distributions([real], [sim], n_locations, min(top_k, support)))


def _content_order(corpus: list[Trajectory]) -> list[Trajectory]:
    return sorted(corpus, key=lambda t: (len(t), t.locs.tobytes()))


def individual_rank_score(
    real: list[Trajectory], sim: list[Trajectory], n_locations: int, top_k: int = RANK_TOP_K
) -> float:
    """Mean per-pair rank divergence over index-matched trajectories.

    Both corpora are put into a canonical content order before pairing, so
    the score never depends on how either list happens to be arranged; with
    unequal sizes the surplus tail of the longer corpus is ignored.
    """
    n = min(len(real), len(sim))
    if n == 0:
        raise ValueError("need at least one trajectory on each side")
    real = _content_order(real)
    sim = _content_order(sim)
    return math.fsum(
        per_trajectory_rank_jsd(real[i], sim[i], n_locations, top_k) for i in range(n)
    ) / n


# -- report -------------------------------------------------------------------


@dataclass
class MetricReport:
    scores: dict[str, float]
    histograms: dict[str, tuple[Histogram, Histogram]]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, value in self.scores.items():
            if not (0.0 <= value <= LN2 + 1e-12):
                raise ValueError(f"metric {name}: JSD {value} outside [0, ln 2]")


def _rank_histogram(masses: np.ndarray, count: int) -> Histogram:
    edges = np.arange(masses.shape[0] + 1, dtype=np.float64)
    return Histogram(edges=edges, masses=masses, count=count)


def evaluate_corpora(
    real: list[Trajectory],
    sim: list[Trajectory],
    vocab: LocationVocabulary,
    metadata: dict | None = None,
) -> MetricReport:
    """All six scores for a simulated corpus against a real one."""
    pairs: dict[str, tuple[Histogram, Histogram]] = {}
    for name, fn, edges in (
        ("distance", lambda c: trip_distances_km(c, vocab), DISTANCE_EDGES),
        ("radius", lambda c: gyration_radii_km(c, vocab), RADIUS_EDGES),
        ("duration", dwell_durations, DURATION_EDGES),
        ("dailyloc", daily_location_ratios, DAILYLOC_EDGES),
    ):
        pairs[name] = (build_histogram(fn(real), edges), build_histogram(fn(sim), edges))
    scores = {name: jsd(h_real.masses, h_sim.masses) for name, (h_real, h_sim) in pairs.items()}

    p, q = rank_distributions(real, sim, vocab.size)
    scores["g_rank"] = jsd(p, q)
    pairs["g_rank"] = (
        _rank_histogram(p, sum(len(t) for t in real)),
        _rank_histogram(q, sum(len(t) for t in sim)),
    )
    scores["i_rank"] = individual_rank_score(real, sim, vocab.size)
    return MetricReport(scores=scores, histograms=pairs, metadata=dict(metadata or {}))


def write_report(report: MetricReport, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "report.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "jsd"])
        for name in METRIC_NAMES:
            writer.writerow([name, repr(report.scores[name])])
    payload = {
        "scores": {k: report.scores[k] for k in METRIC_NAMES},
        "metadata": report.metadata,
    }
    (directory / "report.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    for name, (h_real, h_sim) in report.histograms.items():
        for tag, hist in (("real", h_real), ("sim", h_sim)):
            lines = [
                f"{float(hist.edges[i])!r}\t{float(hist.masses[i])!r}\n" for i in range(hist.masses.shape[0])
            ]
            (directory / f"hist_{name}_{tag}.tsv").write_text("".join(lines), encoding="utf-8")


def load_report_scores(directory) -> dict[str, float]:
    payload = json.loads((Path(directory) / "report.json").read_text(encoding="utf-8"))
    return payload["scores"]


# -- attention profiles --------------------------------------------------------


@dataclass
class AttentionProfile:
    distance_edges: np.ndarray
    distance_means: np.ndarray
    distance_counts: np.ndarray
    lag_hours: np.ndarray
    lag_means: np.ndarray
    lag_counts: np.ndarray


def attention_profile(
    model: TrajectoryTransformer,
    corpus: list[Trajectory],
    vocab: LocationVocabulary,
    distance_edges: np.ndarray | None = None,
    max_lag: int = 24,
    batch_size: int = 32,
) -> AttentionProfile:
    """Mean attention weight bucketed by pair distance (km) and time lag (h).

    Pools every (query, key) pair of every head and layer over the corpus,
    including self pairs at distance zero and lag zero.
    """
    if distance_edges is None:
        distance_edges = np.linspace(0.0, 100.0, 26)
    arrays = _collect_attention_samples(model, corpus, vocab, batch_size)
    dist_sum = np.zeros(distance_edges.shape[0] - 1)
    dist_cnt = np.zeros(distance_edges.shape[0] - 1)
    lag_sum = np.zeros(max_lag)
    lag_cnt = np.zeros(max_lag)
    for weights, dists, lags in arrays:
        d_idx = np.clip(
            np.searchsorted(distance_edges, dists, side="right") - 1, 0, dist_sum.shape[0] - 1
        )
        np.add.at(dist_sum, d_idx, weights)
        np.add.at(dist_cnt, d_idx, 1.0)
        l_idx = np.clip(lags, 0, max_lag - 1)
        np.add.at(lag_sum, l_idx, weights)
        np.add.at(lag_cnt, l_idx, 1.0)
    with np.errstate(invalid="ignore"):
        return AttentionProfile(
            distance_edges=distance_edges,
            distance_means=np.where(dist_cnt > 0, dist_sum / np.maximum(dist_cnt, 1), np.nan),
            distance_counts=dist_cnt,
            lag_hours=np.arange(max_lag),
            lag_means=np.where(lag_cnt > 0, lag_sum / np.maximum(lag_cnt, 1), np.nan),
            lag_counts=lag_cnt,
        )


def _collect_attention_samples(model, corpus, vocab, batch_size):
    t_max = model.config.max_seq_len
    windows = []
    for traj in corpus:
        for start in range(0, len(traj), t_max):
            windows.append((traj.locs[start : start + t_max], traj.slots[start : start + t_max]))
    for i in range(0, len(windows), batch_size):
        group = windows[i : i + batch_size]
        width = max(len(locs) for locs, _ in group)
        ids = np.zeros((len(group), width), dtype=np.int64)
        mask = np.zeros((len(group), width), dtype=bool)
        slots = np.zeros((len(group), width), dtype=np.int64)
        for row, (locs, ss) in enumerate(group):
            ids[row, : len(locs)] = locs
            mask[row, : len(locs)] = True
            slots[row, : len(ss)] = ss
        _, attentions = model.forward(ids, mask, collect_attention=True)
        q_idx, k_idx = np.tril_indices(width)
        for row in range(len(group)):
            keep = mask[row][q_idx] & mask[row][k_idx]
            qs, ks = q_idx[keep], k_idx[keep]
            locs_q = ids[row, qs]
            locs_k = ids[row, ks]
            dists = haversine_km(
                vocab.lats[locs_q], vocab.lons[locs_q], vocab.lats[locs_k], vocab.lons[locs_k]
            )
            lags = slots[row, qs] - slots[row, ks]
            for layer_weights in attentions:
                for head in range(layer_weights.shape[1]):
                    yield layer_weights[row, head][qs, ks], dists, lags


def write_attention_profile(profile: AttentionProfile, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for i in range(profile.distance_means.shape[0]):
        if profile.distance_counts[i] > 0:
            lines.append(f"{float(profile.distance_edges[i])!r}\t{float(profile.distance_means[i])!r}\n")
    (directory / "attention_by_distance.tsv").write_text("".join(lines), encoding="utf-8")
    lines = []
    for i in range(profile.lag_means.shape[0]):
        if profile.lag_counts[i] > 0:
            lines.append(f"{int(profile.lag_hours[i])}\t{float(profile.lag_means[i])!r}\n")
    (directory / "attention_by_lag.tsv").write_text("".join(lines), encoding="utf-8")
