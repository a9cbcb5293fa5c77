import numpy as np
import pytest

from trajsim import _kernels
from trajsim._kernels import numpy_backend

BACKENDS = _kernels.available_backends()
BACKEND_IDS = [b.NAME for b in BACKENDS]


def test_numpy_backend_always_available():
    assert numpy_backend in BACKENDS


def test_env_selection_roundtrip():
    assert _kernels.select_backend("numpy").NAME == "numpy"
    with pytest.raises(ValueError):
        _kernels.select_backend("cuda")


@pytest.mark.parametrize("backend", BACKENDS, ids=BACKEND_IDS)
class TestBackendContracts:
    def test_softmax_rows_normalize(self, backend, rng):
        x = rng.normal(scale=4.0, size=(3, 5, 7))
        y = backend.softmax_lastaxis(x)
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)
        assert (y >= 0).all()

    def test_markov_walk_respects_transition_support(self, backend, rng):
        n = 6
        kernel = rng.random((n, n)) + 0.05
        kernel[:, 3] = 0.0  # state 3 unreachable except as a start
        kernel /= kernel.sum(axis=1, keepdims=True)
        cum = np.cumsum(kernel, axis=1)
        starts = np.array([3, 0], dtype=np.int64)
        lengths = np.array([50, 50], dtype=np.int64)
        uniforms = rng.random(98)
        walk = backend.markov_walk(cum, starts, lengths, uniforms)
        assert walk[0] == 3 and walk[50] == 0
        assert 3 not in walk[1:50] and 3 not in walk[51:]

    def test_run_lengths_on_known_sequence(self, backend):
        out = backend.run_lengths(np.array([5, 5, 5, 2, 2, 9], dtype=np.int64))
        assert out.tolist() == [3, 2, 1]
        assert backend.run_lengths(np.array([], dtype=np.int64)).tolist() == []

    def test_adam_step_reduces_toward_gradient_direction(self, backend):
        p = np.array([1.0, -1.0])
        g = np.array([2.0, -3.0])
        m = np.zeros(2)
        v = np.zeros(2)
        backend.adam_step(p, g, m, v, 1, 0.1, 0.9, 0.999, 1e-8)
        assert p[0] < 1.0 and p[1] > -1.0


@pytest.mark.skipif(len(BACKENDS) < 2, reason="numba backend not importable")
class TestBackendAgreement:
    def numba(self):
        return _kernels.load_backend("numba")

    def test_softmax_agrees_within_ulps(self, rng):
        x = rng.normal(scale=6.0, size=(4, 9, 11))
        np.testing.assert_allclose(
            numpy_backend.softmax_lastaxis(x), self.numba().softmax_lastaxis(x), atol=1e-14
        )

    def test_softmax_grad_agrees(self, rng):
        x = rng.normal(size=(5, 8))
        g = rng.normal(size=(5, 8))
        y = numpy_backend.softmax_lastaxis(x)
        np.testing.assert_allclose(
            numpy_backend.softmax_grad_lastaxis(y, g),
            self.numba().softmax_grad_lastaxis(y, g),
            atol=1e-15,
        )

    def test_adam_bitwise_identical(self, rng):
        p1 = rng.normal(size=257)
        g = rng.normal(size=257)
        p2, m1, v1, m2, v2 = p1.copy(), np.zeros(257), np.zeros(257), np.zeros(257), np.zeros(257)
        for step in (1, 2, 3):
            numpy_backend.adam_step(p1, g, m1, v1, step, 1e-3, 0.9, 0.999, 1e-8)
            self.numba().adam_step(p2, g, m2, v2, step, 1e-3, 0.9, 0.999, 1e-8)
        np.testing.assert_array_equal(p1, p2)
        np.testing.assert_array_equal(m1, m2)
        np.testing.assert_array_equal(v1, v2)

    def test_markov_walk_bitwise_identical(self, rng):
        n = 40
        kernel = rng.random((n, n)) + 1e-3
        kernel /= kernel.sum(axis=1, keepdims=True)
        cum = np.cumsum(kernel, axis=1)
        starts = rng.integers(0, n, size=30).astype(np.int64)
        lengths = rng.integers(6, 25, size=30).astype(np.int64)
        uniforms = rng.random(int(lengths.sum() - 30))
        np.testing.assert_array_equal(
            numpy_backend.markov_walk(cum, starts, lengths, uniforms),
            self.numba().markov_walk(cum, starts, lengths, uniforms),
        )

    def test_run_lengths_bitwise_identical(self, rng):
        values = rng.integers(0, 5, size=500).astype(np.int64)
        np.testing.assert_array_equal(
            numpy_backend.run_lengths(values), self.numba().run_lengths(values)
        )
