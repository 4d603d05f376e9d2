"""Keyed random streams.

Every random decision draws from a generator keyed by
``(master_seed, purpose, round, client)`` so results do not depend on the
order in which clients are simulated.
"""

from __future__ import annotations

import numpy as np

PROBE = 0
TRAIN = 1
ROLES = 2
DATA = 3
PARTITION = 4
TIERS = 5
TEST_DATA = 6
MC_SEEDS = 7


def stream(master_seed: int, purpose: int, *key: int) -> np.random.Generator:
    if master_seed < 0:
        raise ValueError("seed must be non-negative")
    return np.random.default_rng(np.random.SeedSequence([master_seed, purpose, *key]))


def derive_seeds(master_seed: int, n: int) -> list[int]:
    """``n`` independent 63-bit seeds derived from ``master_seed``."""
    gen = stream(master_seed, MC_SEEDS)
    return [int(s) for s in gen.integers(0, 2**63 - 1, size=n, dtype=np.int64)]
