import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajsim.data import (
    SynthSpec,
    Trajectory,
    export_raw,
    frequency_profile,
    haversine_km,
    ingest,
    iter_batches,
    load_dataset,
    save_dataset,
    split_sizes,
    synth_city,
)
from trajsim.data.ingest import IngestionError
from trajsim.seeding import derive_rng


def make_raw_lines(n_users=10, days=2, visits_per_day=8):
    """Regular grid of check-ins: every user-day has visits_per_day records."""
    lines = []
    for u in range(n_users):
        for d in range(days):
            for h in range(visits_per_day):
                key = f"poi{(u + h) % 7}"
                lat, lon = 40.0 + 0.01 * ((u + h) % 7), 116.0 + 0.01 * ((u * 3 + h) % 5)
                lines.append(
                    f"user{u:02d}\t2024-03-{d + 1:02d}T{h + 6:02d}:15:00\t{lat}\t{lon}\t{key}"
                )
    return lines


class TestIngest:
    def test_short_user_day_dropped(self):
        lines = make_raw_lines(n_users=1, days=1, visits_per_day=6)
        short = [
            f"userXX\t2024-03-01T{h + 6:02d}:00:00\t40.0\t116.0\tpoi0" for h in range(5)
        ]
        ds = ingest(lines + short, "demo", seed=1)
        users = {t.user for t in ds.all_trajectories()}
        assert "userXX" not in users
        assert "user00" in users

    def test_split_ratio_70_10_20(self):
        lines = make_raw_lines(n_users=50, days=2)  # 100 user-days
        ds = ingest(lines, "demo", seed=3)
        assert (len(ds.train), len(ds.valid), len(ds.test)) == (70, 10, 20)

    def test_same_slot_keeps_first_record(self):
        lines = [
            f"u\t2024-03-01T{h + 6:02d}:00:00\t40.0\t116.0\tpoi{h}" for h in range(6)
        ]
        lines.insert(1, "u\t2024-03-01T06:30:00\t40.0\t116.0\tpoiLATE")
        ds = ingest(lines, "demo", seed=1)
        assert "poiLATE" not in ds.vocab.keys
        traj = ds.all_trajectories()[0]
        assert len(traj) == 6

    def test_malformed_rows_skip_with_warning(self, caplog):
        lines = make_raw_lines(n_users=2, days=1)
        lines.insert(0, "not a record at all")
        lines.insert(3, "u\tnot-a-date\t40.0\t116.0\tk")
        with caplog.at_level("WARNING"):
            ds = ingest(lines, "demo", seed=1)
        assert len(ds.all_trajectories()) == 2
        assert sum("malformed" in rec.message for rec in caplog.records) >= 2

    def test_empty_survivors_is_error(self):
        lines = ["u\t2024-03-01T06:00:00\t40.0\t116.0\tk"]
        with pytest.raises(IngestionError):
            ingest(lines, "demo", seed=1)

    def test_reingesting_exported_records_is_identity(self):
        ds = ingest(make_raw_lines(n_users=12, days=2), "demo", seed=9)
        again = ingest(export_raw(ds), "demo", seed=9)
        assert again.vocab.keys == ds.vocab.keys
        np.testing.assert_array_equal(again.vocab.lats, ds.vocab.lats)
        for split in ("train", "valid", "test"):
            a, b = ds.split(split), again.split(split)
            assert len(a) == len(b)
            for ta, tb in zip(a, b):
                assert ta.user == tb.user
                np.testing.assert_array_equal(ta.slots, tb.slots)
                np.testing.assert_array_equal(ta.locs, tb.locs)

    def test_every_vocab_id_appears(self):
        ds = ingest(make_raw_lines(n_users=12, days=2), "demo", seed=9)
        seen = np.unique(np.concatenate([t.locs for t in ds.all_trajectories()]))
        np.testing.assert_array_equal(seen, np.arange(ds.vocab.size))


class TestFrequencyProfile:
    def _traj(self, locs):
        return Trajectory(user="u", slots=np.arange(len(locs)), locs=np.asarray(locs))

    def test_unsmoothed_ratio(self):
        prof = frequency_profile([self._traj([0, 0, 0, 1])], 2, epsilon=0.0)
        np.testing.assert_allclose(prof.probs, [0.75, 0.25], rtol=0, atol=0)

    def test_add_one_smoothing_hand_arithmetic(self):
        # counts [0, 0, 4], epsilon 1 -> (0+1)/7, (0+1)/7, (4+1)/7
        prof = frequency_profile([self._traj([2, 2, 2, 2])], 3, epsilon=1.0)
        np.testing.assert_allclose(prof.probs, [1 / 7, 1 / 7, 5 / 7], rtol=1e-15)

    @given(st.lists(st.integers(0, 9), min_size=0, max_size=40), st.floats(0.1, 5.0))
    @settings(max_examples=40, deadline=None)
    def test_normalized_and_strictly_positive(self, locs, eps):
        trajs = [self._traj(sorted(set(locs)))] if locs else []
        prof = frequency_profile(trajs, 10, epsilon=eps)
        assert abs(prof.probs.sum() - 1.0) <= 1e-12
        assert prof.probs.min() > 0


def fit_rank_exponent(ds, top=100):
    """Independent log-log least-squares fit of the rank-frequency curve."""
    counts = np.zeros(ds.vocab.size)
    for t in ds.train:
        counts += np.bincount(t.locs, minlength=ds.vocab.size)
    ordered = np.sort(counts)[::-1]
    k = min(top, int((ordered > 0).sum()))
    ranks = np.arange(1, k + 1)
    slope, _ = np.polyfit(np.log(ranks), np.log(ordered[:k]), 1)
    return -slope


class TestSynthCity:
    def test_rank_frequency_exponent_matches_configured(self):
        spec = SynthSpec(n_locations=500, num_users=2000, days=2, zipf_exponent=1.2, seed=42)
        ds = synth_city("zipfy", spec)
        assert abs(fit_rank_exponent(ds) - 1.2) <= 0.3

    def test_every_day_has_at_least_six_steps(self):
        ds = synth_city("demo", SynthSpec(n_locations=50, num_users=40, days=3, seed=5))
        for traj in ds.all_trajectories():
            assert len(traj) >= 6
            assert len(np.unique(traj.days())) == 1

    def test_same_seed_identical_corpus(self):
        spec = SynthSpec(n_locations=60, num_users=30, days=2, seed=7)
        a, b = synth_city("x", spec), synth_city("x", spec)
        assert len(a.train) == len(b.train)
        for ta, tb in zip(a.train, b.train):
            assert ta.user == tb.user
            np.testing.assert_array_equal(ta.locs, tb.locs)
            np.testing.assert_array_equal(ta.slots, tb.slots)

    def test_vocabulary_is_dense_and_visited(self):
        ds = synth_city("demo", SynthSpec(n_locations=80, num_users=20, days=2, seed=3))
        seen = np.unique(np.concatenate([t.locs for t in ds.all_trajectories()]))
        np.testing.assert_array_equal(seen, np.arange(ds.vocab.size))
        assert np.abs(ds.vocab.lats).max() <= 90
        assert np.abs(ds.vocab.lons).max() <= 180

    def test_coordinates_span_configured_extent(self):
        ds = synth_city(
            "demo", SynthSpec(n_locations=100, num_users=10, days=1, seed=3, grid_extent_km=20)
        )
        d = haversine_km(
            ds.vocab.lats.min(), ds.vocab.lons.min(), ds.vocab.lats.max(), ds.vocab.lons.max()
        )
        assert 10 < d < 60


class TestBatching:
    def _trajs(self, n, length=10):
        return [
            Trajectory(user=f"u{i}", slots=np.arange(length), locs=np.arange(length) % 5)
            for i in range(n)
        ]

    def test_batch_sizes_70_over_32(self):
        batches = iter_batches(self._trajs(70), 32, 24, rng=None)
        assert [b.ids.shape[0] for b in batches] == [32, 32, 6]

    def test_mask_sums_equal_true_lengths(self):
        trajs = [
            Trajectory(user="a", slots=np.arange(4), locs=np.zeros(4, int)),
            Trajectory(user="b", slots=np.arange(7), locs=np.zeros(7, int)),
        ]
        (batch,) = iter_batches(trajs, 8, 24, rng=None)
        assert batch.mask.sum(axis=1).tolist() == [4, 7]

    def test_long_trajectories_are_windowed(self):
        trajs = [Trajectory(user="a", slots=np.arange(30), locs=np.arange(30) % 3)]
        (batch,) = iter_batches(trajs, 8, 24, rng=None)
        assert batch.ids.shape[0] == 2
        assert batch.mask.sum(axis=1).tolist() == [24, 6]

    def test_epochs_reshuffle_but_preserve_multiset(self):
        trajs = [
            Trajectory(user=f"u{i}", slots=np.arange(3), locs=np.array([i % 5, (i + 1) % 5, i % 5]))
            for i in range(70)
        ]

        def epoch_rows(epoch):
            rng = derive_rng(99, "shuffle", epoch)
            rows = []
            for b in iter_batches(trajs, 32, 24, rng):
                rows.extend(tuple(ids[mask]) for ids, mask in zip(b.ids, b.mask))
            return rows

        rows0, rows1 = epoch_rows(0), epoch_rows(1)
        assert rows0 != rows1
        assert sorted(rows0) == sorted(rows1)


class TestSerialization:
    def test_round_trip_equality(self, tmp_path):
        ds = synth_city("demo", SynthSpec(n_locations=40, num_users=15, days=2, seed=11))
        save_dataset(ds, tmp_path / "demo")
        loaded = load_dataset(tmp_path / "demo")
        assert loaded.name == ds.name
        assert loaded.vocab.keys == ds.vocab.keys
        np.testing.assert_array_equal(loaded.vocab.lats, ds.vocab.lats)
        np.testing.assert_array_equal(loaded.frequencies.probs, ds.frequencies.probs)
        for split in ("train", "valid", "test"):
            for ta, tb in zip(ds.split(split), loaded.split(split)):
                assert ta.user == tb.user
                np.testing.assert_array_equal(ta.slots, tb.slots)
                np.testing.assert_array_equal(ta.locs, tb.locs)

    def test_rewriting_is_byte_identical(self, tmp_path):
        ds = synth_city("demo", SynthSpec(n_locations=40, num_users=15, days=2, seed=11))
        save_dataset(ds, tmp_path / "a")
        save_dataset(ds, tmp_path / "b")
        for name in ("vocabulary.tsv", "train.tsv", "valid.tsv", "test.tsv", "frequency.tsv", "meta.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_split_sizes_rounding():
    assert split_sizes(100) == (70, 10, 20)
    assert split_sizes(99) == (69, 9, 21)
    assert sum(split_sizes(7)) == 7
