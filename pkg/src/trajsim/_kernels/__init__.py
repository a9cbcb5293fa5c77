"""Kernel backend selection.

The hot inner loops (masked softmax, adam updates, Markov walks, run-length
scans) exist twice: a numba ``@njit`` backend and a pure-numpy fallback.
``TRAJSIM_KERNELS`` picks one:

* unset or ``auto``: numba when importable, else numpy;
* ``numba``: require numba, fail loudly if missing;
* ``numpy``: force the fallback.

``benchmarks/bench_kernels.py`` compares the two.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import numpy_backend

ENV_VAR = "TRAJSIM_KERNELS"


def load_backend(name: str) -> ModuleType:
    if name == "numpy":
        return numpy_backend
    if name == "numba":
        from . import numba_backend

        return numba_backend
    raise ValueError(f"unknown kernel backend {name!r} (expected 'numpy' or 'numba')")


def select_backend(name: str | None = None) -> ModuleType:
    if name is None:
        name = os.environ.get(ENV_VAR, "auto").lower()
    if name == "auto":
        try:
            return load_backend("numba")
        except ImportError:
            return numpy_backend
    return load_backend(name)


def available_backends() -> list[ModuleType]:
    backends = [numpy_backend]
    try:
        backends.append(load_backend("numba"))
    except ImportError:
        pass
    return backends


_active = select_backend()

BACKEND_NAME = _active.NAME
softmax_lastaxis = _active.softmax_lastaxis
softmax_grad_lastaxis = _active.softmax_grad_lastaxis
adam_step = _active.adam_step
markov_walk = _active.markov_walk
hazard_walk = _active.hazard_walk
run_lengths = _active.run_lengths
