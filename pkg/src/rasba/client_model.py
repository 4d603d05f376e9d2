"""Simulated client hardware: memory feasibility and per-epoch timing."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class ClientProfile:
    """One simulated client.

    Memory use of a batch of size ``b`` is ``mem_model_fixed + mem_per_sample * b``
    megabytes; a batch that does not fit in ``mem_capacity`` runs out of memory.
    Training time for one epoch charges ``t_load + t_fixed`` per mini-batch plus
    ``t_per_sample`` per sample.
    """

    id: int
    n_samples: int
    mem_capacity: float
    mem_model_fixed: float
    mem_per_sample: float
    t_load: float
    t_fixed: float
    t_per_sample: float

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ValueError(f"client {self.id}: n_samples must be >= 1")
        for name in ("mem_capacity", "mem_model_fixed", "mem_per_sample",
                     "t_load", "t_fixed", "t_per_sample"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"client {self.id}: {name} must be finite")
        if self.mem_per_sample <= 0 or self.mem_capacity <= 0:
            raise ValueError(f"client {self.id}: memory capacity and per-sample cost must be positive")
        if self.mem_model_fixed < 0 or self.t_fixed < 0:
            raise ValueError(f"client {self.id}: fixed costs must be non-negative")
        if self.t_load <= 0 or self.t_per_sample <= 0:
            raise ValueError(f"client {self.id}: t_load and t_per_sample must be positive")
        if self.mem_model_fixed + self.mem_per_sample > self.mem_capacity:
            raise ValueError(
                f"client {self.id}: capacity {self.mem_capacity} MB cannot hold a single sample"
            )

    @property
    def batch_overhead(self) -> float:
        """Seconds charged per mini-batch (also the cost of an OOM attempt)."""
        return self.t_load + self.t_fixed


def memory_needed(profile: ClientProfile, b: int) -> float:
    return profile.mem_model_fixed + profile.mem_per_sample * b


def _fits(profile: ClientProfile, b: int) -> bool:
    return memory_needed(profile, b) <= profile.mem_capacity


def max_feasible_batch(profile: ClientProfile) -> int:
    free = profile.mem_capacity - profile.mem_model_fixed
    b = math.floor(free / profile.mem_per_sample)
    # the division can land one off the threshold that _fits sees
    while b > 1 and not _fits(profile, b):
        b -= 1
    while _fits(profile, b + 1):
        b += 1
    return min(b, profile.n_samples)


def try_batch(profile: ClientProfile, b: int) -> bool:
    """Return True if a batch of ``b`` fits, False for an out-of-memory failure."""
    if b < 1:
        raise ValueError(f"batch size must be >= 1, got {b}")
    return b <= profile.n_samples and _fits(profile, b)


def epoch_time(profile: ClientProfile, b: int) -> float:
    if not 1 <= b <= profile.n_samples:
        raise ValueError(f"batch {b} outside [1, {profile.n_samples}] for client {profile.id}")
    n_batches = -(-profile.n_samples // b)
    return n_batches * profile.batch_overhead + profile.n_samples * profile.t_per_sample
