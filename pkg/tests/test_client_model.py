import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from rasba.client_model import ClientProfile, epoch_time, max_feasible_batch, memory_needed, try_batch


def profile(cap=8192.0, fixed=512.0, per=51.2, n=10_000, t_load=0.0015, t_fixed=0.0005, t_ps=1e-5):
    return ClientProfile(0, n, cap, fixed, per, t_load, t_fixed, t_ps)


def scan_cap(p: ClientProfile) -> int:
    """Largest b by exhaustive search."""
    best = 0
    for b in range(1, p.n_samples + 1):
        if memory_needed(p, b) <= p.mem_capacity:
            best = b
    return best


class TestMaxFeasibleBatch:
    def test_reference_profile(self):
        # (8192 - 512) / 51.2 = 150
        assert max_feasible_batch(profile()) == 150

    def test_dataset_size_binds(self):
        assert max_feasible_batch(profile(n=40)) == 40

    def test_single_sample_fits(self):
        assert max_feasible_batch(profile(cap=512 + 51.2)) == 1

    def test_capacity_below_one_sample_rejected(self):
        with pytest.raises(ValueError):
            profile(cap=560.0)

    @given(st.integers(1, 300), st.floats(0.1, 100.0), st.floats(0.0, 2000.0), st.floats(0.0, 1.0),
           st.integers(1, 400))
    def test_matches_linear_scan(self, cap_samples, per, fixed, slack, n):
        cap = fixed + per * cap_samples + slack * per
        p = ClientProfile(0, n, cap, fixed, per, 0.001, 0.0, 1e-5)
        assert max_feasible_batch(p) == scan_cap(p)

    @given(st.floats(600.0, 20000.0), st.floats(600.0, 20000.0))
    def test_monotone_in_capacity(self, a, b):
        lo, hi = sorted((a, b))
        assert max_feasible_batch(profile(cap=lo)) <= max_feasible_batch(profile(cap=hi))


class TestTryBatch:
    def test_boundary(self):
        p = profile()
        assert try_batch(p, 150)
        assert not try_batch(p, 151)

    def test_batch_of_one(self):
        assert try_batch(profile(), 1)

    def test_larger_than_dataset_fails(self):
        assert not try_batch(profile(n=20), 21)

    @pytest.mark.parametrize("b", [0, -3])
    def test_nonpositive_rejected(self, b):
        with pytest.raises(ValueError):
            try_batch(profile(), b)


class TestEpochTime:
    def test_small_batch(self):
        p = profile(n=6000)
        assert epoch_time(p, 4) == pytest.approx(1500 * 0.002 + 0.06, rel=1e-12)
        assert epoch_time(p, 4) == pytest.approx(3.06, rel=1e-12)

    def test_large_batch(self):
        p = profile(n=6000)
        assert epoch_time(p, 256) == pytest.approx(0.108, rel=1e-12)
        assert epoch_time(p, 4) / epoch_time(p, 256) == pytest.approx(3.06 / 0.108, rel=1e-12)

    def test_full_batch_and_b1(self):
        p = profile(n=100)
        assert epoch_time(p, 100) == pytest.approx(0.002 + 100e-5)
        assert epoch_time(p, 1) == pytest.approx(100 * 0.002 + 100e-5)

    @given(st.integers(1, 6000), st.integers(1, 6000))
    def test_non_increasing_in_batch(self, a, b):
        p = profile(n=6000)
        lo, hi = sorted((a, b))
        assert epoch_time(p, hi) <= epoch_time(p, lo)

    @given(st.integers(1, 5000))
    def test_formula(self, b):
        p = profile(n=5000)
        assert epoch_time(p, b) == pytest.approx(math.ceil(5000 / b) * 0.002 + 0.05, rel=1e-12)

    @pytest.mark.parametrize("b", [0, 6001])
    def test_out_of_range(self, b):
        with pytest.raises(ValueError):
            epoch_time(profile(n=6000), b)


@pytest.mark.parametrize("kwargs", [
    dict(n=0), dict(per=0.0), dict(per=-1.0), dict(t_load=0.0), dict(t_ps=0.0),
    dict(fixed=-1.0), dict(t_fixed=-0.1), dict(cap=float("nan")), dict(cap=float("inf")),
])
def test_profile_validation(kwargs):
    with pytest.raises(ValueError):
        profile(**kwargs)
