"""Round logic for collaborative batch-size search.

Each round the server broadcasts the window ``(lo, hi)`` and the model.
Searchers draw a batch size from the open window and try it; shielded
clients train at ``lo`` so the round is never wasted.  The server combines
the windows the clients send back and averages the updates.

``lo`` follows the optimistic rule of taking the largest reported success,
which is exact when every client has the same hardware.  With mixed
hardware a strong client can lift ``lo`` past what a weak client can hold.
Two things keep the protocol sound in that case:

* every client remembers the largest batch it has itself trained with
  (``known_good``); a shielded client that runs out of memory at ``lo``
  reports the failure and falls back to that batch, so it still returns
  an update;
* when the reports contradict each other (a failure at or below another
  client's success) the server drops ``lo`` to the smallest ``known_good``
  across clients, which every client has demonstrably handled.

``hi`` only ever moves down, so the number of such retreats is finite.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import streams
from .bounds import (BoundsState, ProbeOutcome, apply_outcome, has_conflict,
                     init_bounds, merge, retreat, sample_probe)
from .client_model import ClientProfile, epoch_time, try_batch
from .trace import ExperimentTrace, TraceRow
from .trainer import fedavg

log = logging.getLogger(__name__)

SEARCHER = "searcher"
SHIELDED = "shielded"
FIXED = "fixed"

TrainFn = Callable[[np.ndarray, int], np.ndarray]


class ConfigError(ValueError):
    """A federation or experiment setting is invalid."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


@dataclass(frozen=True)
class Strategy:
    kind: str
    batch: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("rasba", "single_prober", "fixed"):
            raise ConfigError(f"unknown strategy {self.kind!r}", "strategy")
        if (self.kind == "fixed") != (self.batch is not None):
            raise ConfigError("a batch size is required for, and only for, fixed strategies", "strategy")
        if self.batch is not None and self.batch < 1:
            raise ConfigError(f"fixed batch must be >= 1, got {self.batch}", "strategy")

    @classmethod
    def parse(cls, text: str) -> "Strategy":
        text = text.strip().lower()
        match = re.fullmatch(r"fixed\s*[(:]\s*(\d+)\s*\)?", text)
        if match:
            return cls("fixed", int(match.group(1)))
        return cls(text)

    @property
    def label(self) -> str:
        return f"fixed({self.batch})" if self.kind == "fixed" else self.kind

    def __str__(self) -> str:
        return self.label


RASBA = Strategy("rasba")


def shielded_count(m: int, f: float) -> int:
    # round() first so that e.g. 0.7 * 10 does not ceil to 8
    return math.ceil(round(f * m, 9))


@dataclass(frozen=True)
class FederationConfig:
    m: int
    f: float
    b_min_init: int
    b_max_init: int
    master_seed: int = 0
    strategy: Strategy = RASBA

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ConfigError(f"m must be >= 1, got {self.m}", "m")
        if not 0 <= self.f < 1:
            raise ConfigError(f"f must lie in [0, 1), got {self.f}", "f")
        if self.b_min_init < 1:
            raise ConfigError(f"b_min must be >= 1, got {self.b_min_init}", "b_min")
        if self.b_max_init < 1:
            raise ConfigError(f"b_max must be >= 1, got {self.b_max_init}", "b_max")
        if self.b_min_init > self.b_max_init:
            raise ConfigError(f"b_min ({self.b_min_init}) must not exceed b_max ({self.b_max_init})", "b_min")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.master_seed}", "seed")
        if self.strategy.kind == "rasba" and self.m - shielded_count(self.m, self.f) < 1:
            raise ConfigError(f"m={self.m}, f={self.f} leaves no client to search", "f")

    @property
    def n_shielded(self) -> int:
        if self.strategy.kind == "single_prober":
            return self.m - 1
        if self.strategy.kind == "fixed":
            return self.m
        return shielded_count(self.m, self.f)

    @property
    def n_searchers(self) -> int:
        return self.m - self.n_shielded


@dataclass(frozen=True)
class Roles:
    searchers: tuple[int, ...]
    shielded: tuple[int, ...]

    def role_of(self, client_id: int) -> str:
        return SEARCHER if client_id in self.searchers else SHIELDED


def assign_roles(config: FederationConfig, round_idx: int, bounds: BoundsState,
                 rng: np.random.Generator | None = None) -> Roles:
    """Pick which clients sit out the search this round.

    Once the window has closed every client is shielded.
    """
    everyone = tuple(range(config.m))
    k = config.m if bounds.converged else config.n_shielded
    if k == config.m:
        return Roles((), everyone)
    if k == 0:
        return Roles(everyone, ())
    if rng is None:
        rng = streams.stream(config.master_seed, streams.ROLES, round_idx)
    shielded = np.sort(rng.choice(config.m, size=k, replace=False))
    chosen = set(shielded.tolist())
    return Roles(tuple(c for c in everyone if c not in chosen), tuple(sorted(chosen)))


@dataclass(frozen=True)
class ClientUpdate:
    params: np.ndarray | None
    n_samples: int


@dataclass(frozen=True)
class RoundReport:
    client_id: int
    bounds: BoundsState
    known_good: int
    sim_time: float
    update: ClientUpdate | None = None
    probe: ProbeOutcome | None = None
    batch_used: int | None = None
    oom: bool = False


def _train(profile: ClientProfile, b: int, model: np.ndarray | None, train: TrainFn | None) -> ClientUpdate:
    params = train(model, b) if (train is not None and model is not None) else model
    return ClientUpdate(params, profile.n_samples)


def client_round(
    profile: ClientProfile,
    role: str,
    bounds: BoundsState,
    model: np.ndarray | None,
    rng: np.random.Generator | None,
    *,
    known_good: int = 1,
    train: TrainFn | None = None,
) -> RoundReport:
    """One client's work for one round.

    ``known_good`` is the largest batch this client has trained with before
    (batch 1 always fits).  ``train(params, batch)`` runs local training;
    without it the model is passed through untouched, which is the
    search-only mode used by the Monte Carlo harness.
    """
    cid = profile.id
    if role == SEARCHER:
        b = sample_probe(bounds, rng)
        if try_batch(profile, b):
            return RoundReport(cid, apply_outcome(bounds, ProbeOutcome(b, True)), max(known_good, b),
                               epoch_time(profile, b), _train(profile, b, model, train),
                               ProbeOutcome(b, True), b)
        return RoundReport(cid, apply_outcome(bounds, ProbeOutcome(b, False)), known_good,
                           profile.batch_overhead, None, ProbeOutcome(b, False), None, oom=True)

    if role == SHIELDED:
        b = bounds.lo
        if try_batch(profile, b):
            return RoundReport(cid, bounds, max(known_good, b), epoch_time(profile, b),
                               _train(profile, b, model, train), None, b)
        # lo was lifted by a stronger client; report the failure and fall back
        if known_good >= b:
            raise ValueError(f"client {cid}: known_good={known_good} but batch {b} does not fit")
        return RoundReport(cid, BoundsState(known_good, b), known_good,
                           profile.batch_overhead + epoch_time(profile, known_good),
                           _train(profile, known_good, model, train), None, known_good, oom=True)

    if role == FIXED:
        b = bounds.lo
        if try_batch(profile, b):
            return RoundReport(cid, bounds, max(known_good, b), epoch_time(profile, b),
                               _train(profile, b, model, train), None, b)
        return RoundReport(cid, bounds, known_good, profile.batch_overhead, None, None, None, oom=True)

    raise ValueError(f"unknown role {role!r}")


@dataclass(frozen=True)
class RoundMetrics:
    round_time: float
    updates: int
    oom_events: int
    conflict: bool
    stale: int
    floor: int


def server_round(
    reports: Sequence[RoundReport],
    model: np.ndarray | None,
    bounds: BoundsState,
) -> tuple[np.ndarray | None, BoundsState, RoundMetrics]:
    """Aggregate one round.  The result does not depend on report order."""
    if not reports:
        raise ValueError("server_round needs at least one report")
    reports = sorted(reports, key=lambda r: r.client_id)
    fresh = [r for r in reports if r.probe is None or bounds.contains(r.probe.probed_batch)]
    floor = min(r.known_good for r in reports)

    new_bounds = bounds
    conflict = False
    if fresh:
        windows = [r.bounds for r in fresh]
        new_bounds = merge(windows)
        conflict = has_conflict(windows)
        if conflict:
            new_bounds = retreat(new_bounds, floor)

    with_params = [(r.update.params, r.update.n_samples) for r in fresh
                   if r.update is not None and r.update.params is not None]
    new_model = fedavg(with_params) if with_params else model

    metrics = RoundMetrics(
        round_time=max(r.sim_time for r in reports),
        updates=sum(r.update is not None for r in fresh),
        oom_events=sum(r.oom for r in reports),
        conflict=conflict,
        stale=len(reports) - len(fresh),
        floor=floor,
    )
    return new_model, new_bounds, metrics


def _check_profiles(config: FederationConfig, profiles: Sequence[ClientProfile]) -> None:
    if len(profiles) != config.m:
        raise ConfigError(f"config has m={config.m} but {len(profiles)} client profiles were given", "m")
    ids = [p.id for p in profiles]
    if ids != list(range(config.m)):
        raise ConfigError(f"client ids must be 0..{config.m - 1} in order, got {ids}")


def initial_bounds(config: FederationConfig, profiles: Sequence[ClientProfile]) -> BoundsState:
    if config.strategy.kind == "fixed":
        b = config.strategy.batch
        return BoundsState(b, b + 1)
    try:
        bounds = init_bounds(config.b_min_init, config.b_max_init, min(p.n_samples for p in profiles))
    except ValueError as exc:
        raise ConfigError(str(exc), "b_min") from exc
    weak = [p.id for p in profiles if not try_batch(p, bounds.lo)]
    if weak:
        raise ConfigError(f"b_min={bounds.lo} does not fit in memory on clients {weak}", "b_min")
    return bounds


def _local_trainer(task, seed: int, round_idx: int, client_id: int) -> TrainFn:
    def train(params: np.ndarray, b: int) -> np.ndarray:
        return task.train(client_id, params, b, streams.stream(seed, streams.TRAIN, round_idx, client_id))
    return train


def run_search(
    config: FederationConfig,
    profiles: Sequence[ClientProfile],
    task=None,
    *,
    rounds: int | None = None,
    max_rounds: int = 10_000,
) -> ExperimentTrace:
    """Run the federation round by round.

    With ``rounds`` set, exactly that many rounds are simulated.  Otherwise
    the run stops once the window has closed and every client has trained
    at the final batch size (search-only Monte Carlo use).  ``task`` is a
    :class:`~rasba.trainer.FederatedTask`; without one no training happens.
    """
    _check_profiles(config, profiles)
    bounds = initial_bounds(config, profiles)
    known_good = {p.id: (bounds.lo if config.strategy.kind != "fixed" else 1) for p in profiles}
    model = task.init_model() if task is not None else None
    seed = config.master_seed

    trace = ExperimentTrace(config.strategy.label)
    loss, acc = task.evaluate(model) if task is not None else (math.nan, math.nan)
    trace.rows.append(TraceRow(0, 0.0, bounds.lo, bounds.hi, 0, 0, loss, acc))

    clock = 0.0
    last_change = 0
    limit = rounds if rounds is not None else max_rounds
    for r in range(1, limit + 1):
        if config.strategy.kind == "fixed":
            roles = None
        else:
            roles = assign_roles(config, r, bounds)
        reports = []
        for p in profiles:
            role = FIXED if roles is None else roles.role_of(p.id)
            rng = streams.stream(seed, streams.PROBE, r, p.id) if role == SEARCHER else None
            train = _local_trainer(task, seed, r, p.id) if task is not None else None
            reports.append(client_round(p, role, bounds, model, rng, known_good=known_good[p.id], train=train))

        model, new_bounds, metrics = server_round(reports, model, bounds)
        for rep in reports:
            known_good[rep.client_id] = rep.known_good
        if new_bounds != bounds:
            last_change = r
        trace.searching.append(roles is not None and not bounds.converged)
        trace.conflicts += metrics.conflict
        bounds = new_bounds
        clock += metrics.round_time
        trace.round_times.append(metrics.round_time)
        loss, acc = task.evaluate(model) if task is not None else (math.nan, math.nan)
        trace.rows.append(TraceRow(r, clock, bounds.lo, bounds.hi, metrics.oom_events,
                                   metrics.updates, loss, acc))
        log.debug("round %d: window (%d, %d), %d updates, %d OOM, %.3fs",
                  r, bounds.lo, bounds.hi, metrics.updates, metrics.oom_events, metrics.round_time)

        settled = bounds.converged and min(known_good.values()) >= bounds.lo
        if rounds is None and settled:
            break

    if config.strategy.kind != "fixed" and bounds.converged:
        trace.rounds_to_convergence = last_change
        trace.converged_batch = bounds.lo
    trace.certified = bounds.converged and min(known_good.values()) >= bounds.lo
    return trace
