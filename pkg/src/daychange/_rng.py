"""Seed threading built on numpy's splittable SeedSequence.

Every stochastic operation in the package takes an integer seed and derives
named sub-streams through spawn keys, so replicate r of any Monte Carlo loop
is reproducible in isolation and independent of every other replicate.
"""

from __future__ import annotations

import numpy as np

# Stream labels used as the first spawn-key element, so different kinds of
# draws inside one operation can never collide.
NULL_STREAM = 0
ALT_STREAM = 1
REF_STREAM = 2
BOOT_STREAM = 3


def seed_sequence(seed, *key: int) -> np.random.SeedSequence:
    """SeedSequence for the sub-stream of ``seed`` addressed by ``key``."""
    if isinstance(seed, np.random.SeedSequence):
        base_key = seed.spawn_key
        return np.random.SeedSequence(
            seed.entropy, spawn_key=tuple(base_key) + tuple(int(k) for k in key)
        )
    return np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))


def rng(seed, *key: int) -> np.random.Generator:
    """Generator on the sub-stream addressed by ``key``."""
    return np.random.default_rng(seed_sequence(seed, *key))
