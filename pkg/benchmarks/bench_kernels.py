"""Timing comparison of the numba kernels against the pure-numpy fallback.

Run as ``python benchmarks/bench_kernels.py``. The numba column compiles on
first call; compilation time is excluded by a warmup pass.
"""

from __future__ import annotations

import time

import numpy as np

from trajsim._kernels import available_backends


def _time(fn, *args, repeats=5) -> float:
    fn(*args)  # warmup / compile
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def make_cases(rng: np.random.Generator) -> dict:
    softmax_x = rng.normal(size=(64, 8, 96, 96))
    grad_y = np.abs(rng.normal(size=(2048, 128)))
    grad_y /= grad_y.sum(axis=-1, keepdims=True)
    grad_g = rng.normal(size=(2048, 128))

    n_params = 1_000_000
    adam = dict(
        param=rng.normal(size=n_params),
        grad=rng.normal(size=n_params),
        m=np.zeros(n_params),
        v=np.zeros(n_params),
    )

    n_states = 500
    kernel = rng.random((n_states, n_states)) + 1e-3
    kernel /= kernel.sum(axis=1, keepdims=True)
    cum = np.cumsum(kernel, axis=1)
    starts = rng.integers(0, n_states, size=4000).astype(np.int64)
    lengths = rng.integers(6, 25, size=4000).astype(np.int64)
    uniforms = rng.random(int(lengths.sum() - 4000))

    stay = np.array([0.92, 0.85, 0.15, 0.04])
    move = kernel.copy()
    move[np.diag_indices_from(move)] = 0.0
    move /= move.sum(axis=1, keepdims=True)
    move_cum = np.cumsum(move, axis=1)
    hazard_uniforms = rng.random(2 * int(lengths.sum() - 4000))

    runs = rng.integers(0, 6, size=1_000_000).astype(np.int64)

    return {
        "softmax_lastaxis": lambda b: b.softmax_lastaxis(softmax_x),
        "softmax_grad_lastaxis": lambda b: b.softmax_grad_lastaxis(grad_y, grad_g),
        "adam_step": lambda b: b.adam_step(
            adam["param"].copy(), adam["grad"], adam["m"].copy(), adam["v"].copy(),
            3, 1e-3, 0.9, 0.999, 1e-8,
        ),
        "markov_walk": lambda b: b.markov_walk(cum, starts, lengths, uniforms),
        "hazard_walk": lambda b: b.hazard_walk(move_cum, stay, starts, lengths, hazard_uniforms),
        "run_lengths": lambda b: b.run_lengths(runs),
    }


def main() -> None:
    backends = available_backends()
    names = [b.NAME for b in backends]
    cases = make_cases(np.random.default_rng(0))
    width = max(len(k) for k in cases)
    header = f"{'kernel':<{width}}  " + "  ".join(f"{n:>10}" for n in names)
    if len(backends) == 2:
        header += f"  {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, call in cases.items():
        times = [_time(call, b) for b in backends]
        row = f"{name:<{width}}  " + "  ".join(f"{t * 1e3:>8.2f}ms" for t in times)
        if len(times) == 2:
            row += f"  {times[0] / times[1]:>7.1f}x"
        print(row)
    if len(backends) == 1:
        print("\nnumba not importable; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
