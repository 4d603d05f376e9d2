import math

import numpy as np
import pytest

from rasba.client_model import epoch_time
from rasba.config import ExperimentConfig, default_config_path, load_config, parse_config
from rasba.harness import (MC_HEADER, SWEEP_HEADER, build_federation, execute, monte_carlo_csv,
                           oracle_batch, run_experiment, run_monte_carlo, run_sweep, summarize_sweep,
                           write_atomic)
from rasba.search_protocol import ConfigError, Strategy
from rasba.trace import TRACE_HEADER

SMALL = ExperimentConfig(m=4, n_train=1200, n_test=300, min_shard=64, rounds=6,
                         sweep_batches=(4, 16, 64), mc_searchers=(1, 2, 4))


class TestConfig:
    def test_default_file_matches_dataclass(self):
        assert load_config(default_config_path()) == ExperimentConfig()

    def test_round_trip(self):
        cfg = ExperimentConfig(m=7, f=0.25, mem_tiers_mb=(5000.0, 3000.5), strategy="fixed(32)")
        assert parse_config(cfg.to_text()) == cfg

    def test_comments_and_blank_lines(self):
        cfg = parse_config("# hi\n\nm = 6   # clients\nsweep_batches = 4, 8\n")
        assert cfg.m == 6 and cfg.sweep_batches == (4, 8)

    @pytest.mark.parametrize("text,key,line", [
        ("m = 10\nbogus = 3\n", "bogus", 2),
        ("m = 10\nm = 11\n", "m", 2),
        ("f = half\n", "f", 1),
        ("b_min = 80\nb_max = 64\n", "b_min", 1),
        ("f = 1.0\n", "f", 1),
        ("lr = nan\n", "lr", 1),
        ("mem_tiers_mb = 400\n", "mem_tiers_mb", 1),
        ("strategy = adam\n", "strategy", 1),
        ("m = 2\nmin_shard = 6000\n", "min_shard", 2),
        ("data_features = x.csv\n", "data_features", 1),
    ])
    def test_errors_name_key_and_line(self, text, key, line):
        with pytest.raises(ConfigError) as exc:
            parse_config(text, "exp.cfg")
        assert exc.value.key == key
        assert f"exp.cfg:{line}:" in str(exc.value)

    def test_b_min_b_max_message_names_both(self):
        with pytest.raises(ConfigError, match="b_min.*b_max"):
            parse_config("b_min = 80\n")

    def test_line_without_equals(self):
        with pytest.raises(ConfigError, match="exp.cfg:1"):
            parse_config("m 10\n", "exp.cfg")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.cfg")

    @pytest.mark.parametrize("m,f,counts", [(10, 0.5, (1, 2, 5, 10)), (4, 0.5, (1, 2, 4)), (10, 0.0, (1, 2, 10))])
    def test_default_searcher_counts(self, m, f, counts):
        assert ExperimentConfig(m=m, f=f, n_train=10_000, min_shard=10).searcher_counts == counts

    def test_replace_revalidates(self):
        with pytest.raises(ConfigError):
            ExperimentConfig().replace(b_min=100)


class TestFederation:
    def test_profiles_follow_shards_and_tiers(self):
        fed = build_federation(ExperimentConfig())
        assert [p.n_samples for p in fed.profiles] == fed.task.shard_sizes
        assert sum(fed.task.shard_sizes) == 10_000
        assert {p.mem_capacity for p in fed.profiles} <= {8192.0, 6144.0, 4096.0}
        assert oracle_batch(fed.profiles, 4, 64) == 64

    def test_oracle_clamps(self):
        fed = build_federation(ExperimentConfig(mem_tiers_mb=(1024.0,)))
        # (1024 - 512) / 12 = 42.67
        assert oracle_batch(fed.profiles, 4, 64) == 42
        assert oracle_batch(fed.profiles, 50, 64) == 50


class TestTraces:
    def test_header_and_rows(self):
        trace = execute(SMALL)
        lines = trace.to_csv().splitlines()
        assert lines[0] == TRACE_HEADER
        assert len(lines) == SMALL.rounds + 2
        assert [r.round for r in trace.rows] == list(range(SMALL.rounds + 1))

    def test_invariants(self):
        trace = execute(ExperimentConfig(rounds=10))
        times = [r.sim_time_s for r in trace.rows]
        assert times == sorted(times)
        assert [r.lo for r in trace.rows] == sorted(r.lo for r in trace.rows)
        assert [r.hi for r in trace.rows] == sorted((r.hi for r in trace.rows), reverse=True)
        assert all(0 <= r.accuracy <= 1 for r in trace.rows)

    def test_clock_is_sum_of_round_maxima(self):
        trace = execute(SMALL)
        resum = np.cumsum(trace.round_times)
        np.testing.assert_allclose([r.sim_time_s for r in trace.rows[1:]], resum, rtol=1e-12)

    @pytest.mark.parametrize("b", [4, 64])
    def test_fixed_time_recomputed_from_profiles(self, b):
        fed = build_federation(SMALL, Strategy("fixed", b))
        per_round = max(epoch_time(p, b) for p in fed.profiles)
        trace = execute(SMALL, Strategy("fixed", b))
        assert trace.total_time == pytest.approx(SMALL.rounds * per_round, rel=1e-12)

    def test_byte_identical_reruns(self, tmp_path):
        run_experiment(SMALL, tmp_path / "a")
        run_experiment(SMALL, tmp_path / "b")
        for name in ("trace.csv", "config.resolved.cfg"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_seed_changes_output(self):
        assert execute(SMALL).to_csv() != execute(SMALL.replace(seed=1)).to_csv()

    def test_resolved_config_reloads(self, tmp_path):
        run_experiment(SMALL, tmp_path)
        assert load_config(tmp_path / "config.resolved.cfg") == SMALL

    def test_csv_dataset(self, tmp_path):
        train = build_federation(SMALL).task.train_set
        np.savetxt(tmp_path / "x.csv", train.features, delimiter=",", fmt="%.17g")
        np.savetxt(tmp_path / "y.csv", train.labels, delimiter=",", fmt="%d")
        cfg = SMALL.replace(data_features=str(tmp_path / "x.csv"), data_labels=str(tmp_path / "y.csv"),
                            n_train=1, n_test=200)
        fed = build_federation(cfg)
        assert len(fed.task.test_set) == 200
        assert sum(fed.task.shard_sizes) + 200 == 1200
        assert execute(cfg).final_accuracy > 0.9


class TestSweep:
    def test_table_shape(self, tmp_path):
        results, traces = run_sweep(SMALL, tmp_path)
        lines = (tmp_path / "sweep.csv").read_text().splitlines()
        assert lines[0] == SWEEP_HEADER
        assert [r.strategy for r in results] == ["fixed(4)", "fixed(16)", "fixed(64)", "rasba"]
        assert results[0].speedup == 1.0
        assert results[-1].rounds_to_convergence is not None
        assert all(r.rounds_to_convergence is None for r in results[:-1])
        assert lines[1].endswith(",")
        for t in traces:
            name = t.strategy.replace("(", "_").replace(")", "")
            assert (tmp_path / f"trace_{name}.csv").exists()

    def test_default_has_eight_rows(self):
        results, _ = run_sweep(ExperimentConfig(rounds=2), train=False)
        assert len(results) == 8

    def test_speedup_is_time_ratio(self):
        results, _ = run_sweep(SMALL, train=False)
        base = results[0].total_time_s
        for r in results:
            assert r.speedup == pytest.approx(base / r.total_time_s, rel=1e-15)

    def test_single_trace(self):
        (r,) = summarize_sweep([execute(SMALL)])
        assert r.speedup == 1.0

    def test_mismatched_tasks(self):
        with pytest.raises(ValueError, match="different tasks"):
            summarize_sweep([execute(SMALL), execute(SMALL.replace(seed=4))])

    def test_empty(self):
        with pytest.raises(ValueError):
            summarize_sweep([])


class TestMonteCarlo:
    def test_summary(self):
        out = run_monte_carlo(SMALL, 200)
        assert [s.searchers for s in out] == [1, 2, 4]
        for s in out:
            assert s.seeds == 200 and s.exact_rate == 1.0
            assert s.mean_batch == 64 and s.median_batch == 64
            r = np.array(s.rounds, dtype=float)
            assert s.mean_rounds == pytest.approx(r.mean())
            assert s.ci95_rounds == pytest.approx(1.96 * r.std(ddof=1) / math.sqrt(len(r)))
            assert s.median_rounds == np.median(r) and s.p95_rounds == np.percentile(r, 95)

    def test_csv(self):
        text = monte_carlo_csv(run_monte_carlo(SMALL, 20, (2,)))
        lines = text.splitlines()
        assert lines[0] == MC_HEADER and len(lines) == 2
        assert lines[1].startswith("2,20,")

    def test_workers_agree(self):
        serial = run_monte_carlo(SMALL, 40, (2,))
        parallel = run_monte_carlo(SMALL, 40, (2,), workers=3)
        assert serial[0].rounds == parallel[0].rounds

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            run_monte_carlo(SMALL, 0)
        with pytest.raises(ConfigError):
            run_monte_carlo(SMALL, 5, (9,))


def test_write_atomic_leaves_no_temp_files(tmp_path):
    target = tmp_path / "sub" / "out.csv"
    write_atomic(target, "a\n")
    write_atomic(target, "b\n")
    assert target.read_text() == "b\n"
    assert [p.name for p in target.parent.iterdir()] == ["out.csv"]
