"""Flat ``key = value`` experiment configuration."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .search_protocol import ConfigError, Strategy, shielded_count


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(" ", "").split(",") if t)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(" ", "").split(",") if t)


@dataclass(frozen=True)
class ExperimentConfig:
    # federation and search
    m: int = 10
    f: float = 0.5
    b_min: int = 4
    b_max: int = 64
    seed: int = 0
    strategy: str = "rasba"
    rounds: int = 25
    # training
    lr: float = 0.1
    epochs: int = 1
    alpha: float = 10.0
    min_shard: int = 64
    n_train: int = 10_000
    n_test: int = 2_000
    n_classes: int = 10
    n_features: int = 32
    margin: float = 5.0
    data_features: str = ""
    data_labels: str = ""
    # timing model, seconds
    t_load: float = 0.0015
    t_fixed: float = 0.0005
    t_per_sample: float = 4.5e-5
    # memory model, megabytes
    mem_fixed_mb: float = 512.0
    mem_per_sample_mb: float = 12.0
    mem_tiers_mb: tuple[float, ...] = (8192.0, 6144.0, 4096.0)
    # sweep and Monte Carlo
    sweep_batches: tuple[int, ...] = (4, 8, 16, 32, 64, 128, 256)
    mc_searchers: tuple[int, ...] = ()  # empty: 1, 2, the configured searcher count, m
    _lines: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def parsed_strategy(self) -> Strategy:
        return Strategy.parse(self.strategy)

    @property
    def searcher_counts(self) -> tuple[int, ...]:
        if self.mc_searchers:
            return self.mc_searchers
        return tuple(sorted({1, min(2, self.m), self.m - shielded_count(self.m, self.f), self.m}))

    def replace(self, **changes) -> "ExperimentConfig":
        return validate(dataclasses.replace(self, **changes))

    def to_text(self) -> str:
        out = []
        for fld in fields(self):
            if fld.name.startswith("_"):
                continue
            value = getattr(self, fld.name)
            if isinstance(value, tuple):
                value = ",".join(_fmt(v) for v in value)
            else:
                value = _fmt(value)
            out.append(f"{fld.name} = {value}")
        return "\n".join(out) + "\n"


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


_PARSERS = {"int": int, "float": float, "str": str,
            "tuple[int, ...]": _ints, "tuple[float, ...]": _floats}


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    known = {f.name: f for f in fields(ExperimentConfig) if not f.name.startswith("_")}
    values: dict[str, object] = {}
    lines: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{where}: unknown key {key!r}", key)
        if key in values:
            raise ConfigError(f"{where}: duplicate key {key!r}", key)
        try:
            values[key] = _PARSERS[known[key].type](value)
        except ValueError:
            raise ConfigError(f"{where}: bad value {value!r} for {key!r}", key) from None
        lines[key] = where
    return validate(ExperimentConfig(**values, _lines=lines))


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def default_config_path() -> Path:
    return Path(__file__).with_name("default.cfg")


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    def fail(key: str, msg: str, *also: str) -> None:
        where = cfg._lines.get(key) or next((cfg._lines[k] for k in also if k in cfg._lines), None)
        raise ConfigError(f"{where}: {msg}" if where else msg, key)

    for fld in fields(cfg):
        value = getattr(cfg, fld.name)
        if isinstance(value, float) and not math.isfinite(value):
            fail(fld.name, f"{fld.name} must be finite, got {value}")
        if isinstance(value, tuple) and not all(math.isfinite(v) for v in value):
            fail(fld.name, f"{fld.name} must be finite")
    for key in ("m", "rounds", "epochs", "b_min", "b_max", "n_train", "n_test",
                "n_features", "min_shard"):
        if getattr(cfg, key) < 1:
            fail(key, f"{key} must be >= 1, got {getattr(cfg, key)}")
    if cfg.n_classes < 2:
        fail("n_classes", f"n_classes must be >= 2, got {cfg.n_classes}")
    if not 0 <= cfg.f < 1:
        fail("f", f"f must lie in [0, 1), got {cfg.f}")
    if not 0 <= cfg.seed < 2**64:
        fail("seed", f"seed must be a 64-bit unsigned integer, got {cfg.seed}")
    if cfg.b_min > cfg.b_max:
        fail("b_min", f"b_min ({cfg.b_min}) must not exceed b_max ({cfg.b_max})", "b_max")
    for key in ("lr", "alpha", "t_load", "t_per_sample", "mem_per_sample_mb"):
        if not getattr(cfg, key) > 0:
            fail(key, f"{key} must be positive, got {getattr(cfg, key)}")
    for key in ("t_fixed", "mem_fixed_mb", "margin"):
        if getattr(cfg, key) < 0:
            fail(key, f"{key} must be non-negative, got {getattr(cfg, key)}")
    if not cfg.mem_tiers_mb:
        fail("mem_tiers_mb", "mem_tiers_mb needs at least one capacity")
    for cap in cfg.mem_tiers_mb:
        if cap < cfg.mem_fixed_mb + cfg.mem_per_sample_mb:
            fail("mem_tiers_mb", f"tier {cap} MB cannot hold a single sample", "mem_fixed_mb")
    if not cfg.sweep_batches or min(cfg.sweep_batches) < 1:
        fail("sweep_batches", "sweep_batches must list positive batch sizes")
    if cfg.mc_searchers and (min(cfg.mc_searchers) < 1 or max(cfg.mc_searchers) > cfg.m):
        fail("mc_searchers", f"mc_searchers must lie in [1, m={cfg.m}]")
    if bool(cfg.data_features) != bool(cfg.data_labels):
        fail("data_features", "data_features and data_labels must be given together", "data_labels")
    if cfg.data_features == "" and cfg.n_train < cfg.m * cfg.min_shard:
        fail("min_shard", f"n_train={cfg.n_train} cannot give {cfg.m} clients {cfg.min_shard} samples each")
    try:
        strategy = Strategy.parse(cfg.strategy)
    except ConfigError as exc:
        fail("strategy", str(exc))
    if strategy.kind == "rasba" and cfg.m - shielded_count(cfg.m, cfg.f) < 1:
        fail("f", f"m={cfg.m}, f={cfg.f} leaves no client to search", "m")
    return cfg
