"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ExperimentConfig, default_config_path, load_config
from .harness import monte_carlo_csv, run_experiment, run_monte_carlo, run_sweep, write_atomic
from .search_protocol import ConfigError
from .trainer import TrainingDiverged

log = logging.getLogger("rasba")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="experiment config (default: the bundled default.cfg)")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--quiet", action="store_true", help="only report warnings and errors")

    parser = argparse.ArgumentParser(prog="rasba", description="Collaborative batch-size search simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run the configured strategy and write trace.csv")
    sub.add_parser("sweep", parents=[common], help="time and accuracy of each fixed batch size and of the search")
    mc = sub.add_parser("monte-carlo", parents=[common], help="search-only rounds-to-convergence statistics")
    mc.add_argument("--seeds", type=int, default=1000, help="number of protocol seeds")
    sub.add_parser("validate", parents=[common], help="check the config and print resolved values")
    return parser


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config or default_config_path())
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    try:
        cfg = _load(args)
        if args.command == "validate":
            print(cfg.to_text(), end="")
            print(f"# window [{cfg.b_min},{cfg.b_max}], m={cfg.m}, f={cfg.f}, strategy {cfg.strategy}")
            return 0
        if args.command == "run":
            log.info("running %s for %d rounds", cfg.strategy, cfg.rounds)
            trace = run_experiment(cfg, args.out)
            last = trace.rows[-1]
            log.info("done: %.3f simulated s, window (%d, %d), accuracy %.4f",
                     last.sim_time_s, last.lo, last.hi, last.accuracy)
        elif args.command == "sweep":
            results, _ = run_sweep(cfg, args.out)
            for r in results:
                log.info("%-12s %9.3f s  x%6.2f  acc %.4f", r.strategy, r.total_time_s, r.speedup,
                         r.final_accuracy)
        elif args.command == "monte-carlo":
            if args.seeds < 1:
                raise ConfigError("--seeds must be >= 1", "seeds")
            summaries = run_monte_carlo(cfg, args.seeds)
            write_atomic(args.out / "monte_carlo.csv", monte_carlo_csv(summaries))
            write_atomic(args.out / "config.resolved.cfg", cfg.to_text())
            for s in summaries:
                log.info("k=%d: mean %.3f rounds (+-%.3f), median %g, p95 %g, exact %.3f",
                         s.searchers, s.mean_rounds, s.ci95_rounds, s.median_rounds,
                         s.p95_rounds, s.exact_rate)
        log.info("outputs in %s", args.out)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (TrainingDiverged, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
