"""Batch-size search window.

The window is held as ``(lo, hi)`` where ``lo`` is the largest batch size
believed to work for the whole federation and ``hi`` is the smallest batch
size that is known to fail on at least one client.  ``hi`` is exclusive, so
the search is finished once ``hi - lo == 1`` and the shared batch is ``lo``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np


@dataclass(frozen=True)
class BoundsState:
    lo: int
    hi: int

    def __post_init__(self) -> None:
        if not (1 <= self.lo < self.hi):
            raise ValueError(f"invalid bounds: need 1 <= lo < hi, got lo={self.lo}, hi={self.hi}")

    @property
    def converged(self) -> bool:
        return self.hi - self.lo == 1

    @property
    def width(self) -> int:
        """Number of batch sizes still undecided (the open window)."""
        return self.hi - self.lo - 1

    def contains(self, b: int) -> bool:
        return self.lo < b < self.hi


@dataclass(frozen=True)
class ProbeOutcome:
    probed_batch: int
    succeeded: bool


def init_bounds(b_min_init: int, b_max_init: int, min_dataset_size: int) -> BoundsState:
    """Initial window.

    ``b_max_init`` is itself a candidate, so it goes inside the window; the
    smallest local dataset is a hard ceiling because no client can fill a
    batch larger than its shard.
    """
    if b_min_init < 1 or b_max_init < 1 or min_dataset_size < 1:
        raise ValueError("batch sizes and dataset size must be positive")
    if b_min_init > b_max_init:
        raise ValueError(f"b_min ({b_min_init}) exceeds b_max ({b_max_init})")
    ceiling = min(b_max_init, min_dataset_size)
    if b_min_init > ceiling:
        raise ValueError(
            f"no feasible window: b_min ({b_min_init}) exceeds the smallest dataset ({min_dataset_size})"
        )
    return BoundsState(b_min_init, ceiling + 1)


def sample_probe(state: BoundsState, rng: np.random.Generator) -> int:
    """Draw a batch size uniformly from the open window ``(lo, hi)``."""
    if state.converged:
        raise ValueError(f"cannot probe a converged window {state}")
    return int(rng.integers(state.lo + 1, state.hi))


def apply_outcome(state: BoundsState, outcome: ProbeOutcome) -> BoundsState:
    b = outcome.probed_batch
    if not state.contains(b):
        raise ValueError(f"probe {b} outside open window ({state.lo}, {state.hi})")
    if outcome.succeeded:
        return BoundsState(b, state.hi)
    return BoundsState(state.lo, b)


def has_conflict(reports: Iterable[BoundsState]) -> bool:
    """True if some client succeeded at or above a size another client failed at."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports")
    return max(r.lo for r in reports) >= min(r.hi for r in reports)


def merge(reports: Iterable[BoundsState]) -> BoundsState:
    """Server-side combination of client windows.

    Componentwise max of ``lo`` and min of ``hi``.  When the two cross, the
    failure wins and ``lo`` is clamped to ``hi - 1``.  The clamp keeps the
    operation commutative, associative and idempotent.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("merge needs at least one report")
    hi = min(r.hi for r in reports)
    lo = min(max(r.lo for r in reports), hi - 1)
    return BoundsState(lo, hi)


def retreat(state: BoundsState, floor: int) -> BoundsState:
    """Drop ``lo`` back to a batch size every client has trained with."""
    if floor >= state.hi:
        raise ValueError(f"floor {floor} is not below hi={state.hi}")
    return BoundsState(floor, state.hi)
