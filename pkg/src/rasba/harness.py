"""Experiment orchestration: federations from config, sweeps, Monte Carlo."""

from __future__ import annotations

import logging
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import streams
from .client_model import ClientProfile, max_feasible_batch
from .config import ExperimentConfig, load_config
from .search_protocol import ConfigError, FederationConfig, Strategy, run_search
from .trace import ExperimentTrace
from .trainer import (Dataset, FederatedTask, PartitionSpec, dirichlet_partition, load_csv_dataset,
                      synthetic_task)

log = logging.getLogger(__name__)

SWEEP_HEADER = "strategy,total_time_s,speedup,final_accuracy,rounds_to_convergence"
MC_HEADER = ("searchers,seeds,mean_rounds,ci95_rounds,median_rounds,p95_rounds,"
             "mean_batch,median_batch,exact_rate")


@dataclass
class Federation:
    config: FederationConfig
    profiles: list[ClientProfile]
    task: FederatedTask
    task_key: str


def write_atomic(path: str | Path, text: str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def make_profiles(cfg: ExperimentConfig, shard_sizes: Sequence[int]) -> list[ClientProfile]:
    """Client profiles whose memory capacity is drawn from the hardware tiers."""
    rng = streams.stream(cfg.seed, streams.TIERS)
    tiers = rng.choice(np.asarray(cfg.mem_tiers_mb, dtype=float), size=len(shard_sizes))
    return [
        ClientProfile(i, int(n), float(cap), cfg.mem_fixed_mb, cfg.mem_per_sample_mb,
                      cfg.t_load, cfg.t_fixed, cfg.t_per_sample)
        for i, (n, cap) in enumerate(zip(shard_sizes, tiers))
    ]


def task_key(cfg: ExperimentConfig) -> str:
    parts = (cfg.seed, cfg.m, cfg.alpha, cfg.min_shard, cfg.lr, cfg.epochs,
             cfg.n_train, cfg.n_test, cfg.n_classes, cfg.n_features, cfg.margin,
             cfg.data_features, cfg.data_labels)
    return "|".join(str(p) for p in parts)


def build_federation(cfg: ExperimentConfig, strategy: Strategy | None = None) -> Federation:
    if cfg.data_features:
        data = load_csv_dataset(cfg.data_features, cfg.data_labels)
        perm = streams.stream(cfg.seed, streams.TEST_DATA).permutation(len(data))
        n_test = min(cfg.n_test, len(data) // 5)
        test_idx, train_idx = np.sort(perm[:n_test]), np.sort(perm[n_test:])
        train = Dataset(*data.subset(train_idx), data.n_classes)
        test = Dataset(*data.subset(test_idx), data.n_classes)
    else:
        train, test = synthetic_task(cfg.n_train, cfg.n_test, cfg.n_classes,
                                     cfg.n_features, cfg.margin, cfg.seed)
    try:
        shards = dirichlet_partition(train, PartitionSpec(cfg.alpha, cfg.m, cfg.min_shard),
                                     streams.stream(cfg.seed, streams.PARTITION))
    except ValueError as exc:
        raise ConfigError(str(exc), "min_shard") from exc
    profiles = make_profiles(cfg, [len(s) for s in shards])
    fed_cfg = FederationConfig(cfg.m, cfg.f, cfg.b_min, cfg.b_max, cfg.seed,
                               strategy or cfg.parsed_strategy)
    task = FederatedTask(train, test, shards, cfg.lr, cfg.epochs)
    return Federation(fed_cfg, profiles, task, task_key(cfg))


def oracle_batch(profiles: Sequence[ClientProfile], b_min: int, b_max: int) -> int:
    """The shared batch a correct search must find."""
    cap = min(max_feasible_batch(p) for p in profiles)
    return max(b_min, min(cap, b_max))


def execute(cfg: ExperimentConfig, strategy: Strategy | None = None, *, train: bool = True) -> ExperimentTrace:
    fed = build_federation(cfg, strategy)
    trace = run_search(fed.config, fed.profiles, fed.task if train else None, rounds=cfg.rounds)
    trace.task_key = fed.task_key
    return trace


def run_experiment(config: ExperimentConfig | str | Path, out_dir: str | Path | None = None) -> ExperimentTrace:
    """Run the configured strategy; optionally write ``trace.csv`` and the resolved config."""
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    trace = execute(cfg)
    if out_dir is not None:
        out = Path(out_dir)
        write_atomic(out / "trace.csv", trace.to_csv())
        write_atomic(out / "config.resolved.cfg", cfg.to_text())
    return trace


@dataclass(frozen=True)
class SweepResult:
    strategy: str
    total_time_s: float
    speedup: float
    final_accuracy: float
    rounds_to_convergence: int | None

    def to_csv(self) -> str:
        rtc = "" if self.rounds_to_convergence is None else str(self.rounds_to_convergence)
        acc = "" if math.isnan(self.final_accuracy) else repr(self.final_accuracy)
        return f"{self.strategy},{self.total_time_s!r},{self.speedup!r},{acc},{rtc}"


def summarize_sweep(traces: Sequence[ExperimentTrace]) -> list[SweepResult]:
    """One row per strategy; speedup is relative to the smallest fixed batch."""
    if not traces:
        raise ValueError("no traces to summarize")
    keys = {t.task_key for t in traces}
    if len(keys) > 1:
        raise ValueError(f"traces come from different tasks: {sorted(map(str, keys))}")
    fixed = [(Strategy.parse(t.strategy).batch, t) for t in traces if t.strategy.startswith("fixed")]
    baseline = min(fixed, key=lambda bt: bt[0])[1] if fixed else traces[0]
    return [
        SweepResult(t.strategy, t.total_time, baseline.total_time / t.total_time,
                    t.final_accuracy, t.rounds_to_convergence)
        for t in traces
    ]


def sweep_csv(results: Sequence[SweepResult]) -> str:
    return "\n".join([SWEEP_HEADER, *(r.to_csv() for r in results)]) + "\n"


def run_sweep(cfg: ExperimentConfig, out_dir: str | Path | None = None, *, train: bool = True
              ) -> tuple[list[SweepResult], list[ExperimentTrace]]:
    strategies = [Strategy("fixed", b) for b in cfg.sweep_batches] + [cfg.parsed_strategy]
    traces = []
    for s in strategies:
        log.info("sweep: running %s", s.label)
        traces.append(execute(cfg, s, train=train))
    results = summarize_sweep(traces)
    if out_dir is not None:
        out = Path(out_dir)
        write_atomic(out / "sweep.csv", sweep_csv(results))
        for t in traces:
            name = t.strategy.replace("(", "_").replace(")", "")
            write_atomic(out / f"trace_{name}.csv", t.to_csv())
        write_atomic(out / "config.resolved.cfg", cfg.to_text())
    return results, traces


@dataclass(frozen=True)
class MonteCarloSummary:
    searchers: int
    seeds: int
    mean_rounds: float
    ci95_rounds: float
    median_rounds: float
    p95_rounds: float
    mean_batch: float
    median_batch: float
    exact_rate: float
    rounds: tuple[int, ...] = ()

    def to_csv(self) -> str:
        vals = (self.mean_rounds, self.ci95_rounds, self.median_rounds, self.p95_rounds,
                self.mean_batch, self.median_batch, self.exact_rate)
        return f"{self.searchers},{self.seeds}," + ",".join(repr(float(v)) for v in vals)


def _search_batch(args) -> list[tuple[int, int]]:
    fed_cfg, profiles, seeds = args
    out = []
    for s in seeds:
        cfg = FederationConfig(fed_cfg.m, fed_cfg.f, fed_cfg.b_min_init, fed_cfg.b_max_init, s,
                               fed_cfg.strategy)
        t = run_search(cfg, profiles)
        out.append((t.rounds_to_convergence, t.converged_batch))
    return out


def search_ensemble(fed_cfg: FederationConfig, profiles: Sequence[ClientProfile],
                    seeds: Sequence[int], workers: int = 1) -> list[tuple[int, int]]:
    """(rounds-to-convergence, converged batch) for each seed, search only, in seed order."""
    if workers <= 1:
        return _search_batch((fed_cfg, list(profiles), list(seeds)))
    chunks = [list(seeds[i::workers]) for i in range(workers)]
    with ProcessPoolExecutor(workers) as pool:
        parts = list(pool.map(_search_batch, [(fed_cfg, list(profiles), c) for c in chunks]))
    merged: list[tuple[int, int]] = [None] * len(seeds)  # type: ignore[list-item]
    for i, part in enumerate(parts):
        merged[i::workers] = part
    return merged


def summarize_runs(k: int, runs: Sequence[tuple[int, int]], oracle: int) -> MonteCarloSummary:
    rounds = np.array([r for r, _ in runs], dtype=float)
    batch = np.array([b for _, b in runs], dtype=float)
    n = len(runs)
    ci = 1.96 * rounds.std(ddof=1) / math.sqrt(n) if n > 1 else math.nan
    return MonteCarloSummary(
        k, n, float(rounds.mean()), float(ci), float(np.median(rounds)),
        float(np.percentile(rounds, 95)), float(batch.mean()), float(np.median(batch)),
        float(np.mean(batch == oracle)), tuple(int(r) for r in rounds),
    )


def run_monte_carlo(cfg: ExperimentConfig, n_seeds: int, searcher_counts: Sequence[int] | None = None,
                    workers: int = 1) -> list[MonteCarloSummary]:
    """Search-only ensembles, one per searcher count ``k`` (``f = (m - k) / m``).

    The federation (data split and hardware) is fixed by ``cfg.seed``; only
    the protocol's random streams vary between runs.
    """
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    fed = build_federation(cfg)
    oracle = oracle_batch(fed.profiles, cfg.b_min, cfg.b_max)
    seeds = streams.derive_seeds(cfg.seed, n_seeds)
    out = []
    for k in searcher_counts or cfg.searcher_counts:
        if not 1 <= k <= cfg.m:
            raise ConfigError(f"searcher count {k} outside [1, {cfg.m}]", "mc_searchers")
        fed_cfg = FederationConfig(cfg.m, (cfg.m - k) / cfg.m, cfg.b_min, cfg.b_max, cfg.seed)
        log.info("monte carlo: %d searchers, %d seeds", k, n_seeds)
        out.append(summarize_runs(k, search_ensemble(fed_cfg, fed.profiles, seeds, workers), oracle))
    return out


def monte_carlo_csv(summaries: Sequence[MonteCarloSummary]) -> str:
    return "\n".join([MC_HEADER, *(s.to_csv() for s in summaries)]) + "\n"
