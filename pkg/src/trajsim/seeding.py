"""Deterministic RNG derivation.

Every stochastic operation in the package draws from a generator derived from
a master seed plus a string context, so independent streams never depend on
call order and whole runs replay bit-identically.
"""

from __future__ import annotations

import zlib

import numpy as np


def derive_rng(master_seed: int, *tags: object) -> np.random.Generator:
    """Return a generator keyed by ``master_seed`` and a tag path.

    Tags are hashed with crc32, which is stable across platforms and Python
    processes (unlike ``hash``).
    """
    entropy = [int(master_seed) & 0xFFFFFFFFFFFFFFFF]
    for tag in tags:
        entropy.append(zlib.crc32(str(tag).encode("utf-8")))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
