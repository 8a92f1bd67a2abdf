import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from selfrep.brownian import (LatticeWalkPath, StopRule, inverse_local_time_stop,
                              local_time_profile, read_walk_binary, reverse_path, sample_walk,
                              stopped_local_times, walk_to_csv, write_walk_binary)
from selfrep.stats import SampleSet, ks_two_sample


def test_level0_single_jump_has_two_states():
    p = sample_walk(0, 0, StopRule.after_jumps(1), 3)
    assert p.n_events == 2
    assert abs(int(p.sites[1])) == 1


def test_level0_holding_time_is_unit_exponential():
    holds = np.array([sample_walk(0, 0, StopRule.after_jumps(1), s).holds[0] for s in range(2000)])
    exp = SampleSet("exp", np.random.default_rng(1).standard_exponential(2000))
    assert ks_two_sample(SampleSet("holds", holds), exp, 0.01).passed


def test_inverse_local_time_exact_at_site():
    p = sample_walk(6, 0, inverse_local_time_stop(6, 0, 0.5), 11)
    prof = local_time_profile(p)
    assert prof.at(0) == pytest.approx(0.5, rel=1e-12)
    assert int(p.sites[-1]) == 0


def test_tiny_threshold_fires_at_once():
    p = sample_walk(6, 0, inverse_local_time_stop(6, 0, 1e-300), 2)
    assert p.n_events == 1
    assert p.total_time < 1e-290


def test_profile_vanishes_outside_range():
    p = sample_walk(6, 0, inverse_local_time_stop(6, 0, 0.5), 5)
    prof = local_time_profile(p)
    lo, hi = int(p.sites.min()), int(p.sites.max())
    assert prof.at(lo - 1) == 0.0 and prof.at(hi + 1) == 0.0
    assert np.all(prof.values >= 0)


@given(st.integers(0, 2**31), st.integers(0, 8), st.floats(0.01, 2.0))
def test_occupation_identity(seed, level, horizon):
    p = sample_walk(level, 0, StopRule.at_time(horizon), seed)
    assert p.total_time == pytest.approx(horizon, rel=1e-12)
    assert local_time_profile(p, 0.0).values.sum() == 0.0
    assert local_time_profile(p).occupation() == pytest.approx(p.total_time, rel=1e-12)


def test_single_hold_profile():
    prof = local_time_profile(LatticeWalkPath(0, np.array([0]), np.array([1.0])), 1.0)
    assert prof.at(0) == 1.0


@given(st.integers(0, 2**31), st.integers(0, 7))
def test_reverse_is_involution(seed, level):
    p = sample_walk(level, 0, StopRule.after_jumps(50), seed)
    r = reverse_path(reverse_path(p))
    assert np.array_equal(r.sites, p.sites)
    assert np.array_equal(r.holds, p.holds)


def test_reverse_swaps_endpoints_and_keeps_constant_path():
    p = sample_walk(6, 0, inverse_local_time_stop(6, 0, 0.5), 9)
    r = reverse_path(p)
    assert int(r.sites[-1]) == int(p.sites[0]) == 0
    still = LatticeWalkPath(2, np.array([4]), np.array([0.3]))
    rs = reverse_path(still)
    assert np.array_equal(rs.sites, still.sites) and np.array_equal(rs.holds, still.holds)


def test_stop_on_hit_and_callable():
    p = sample_walk(3, 0, StopRule.on_hit(5), 1)
    assert int(p.sites[-1]) == 5
    q = sample_walk(3, 0, lambda path: path.n_events >= 8, 1)
    assert q.n_events == 8


def test_censored_local_time_mean_is_constant():
    # the squared zero-dimensional Bessel process from 1/2 keeps mean 1/2
    vals = np.array([stopped_local_times(5, 0.5, (0, 32), s).at(32) for s in range(4000)])
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    assert abs(vals.mean() - 0.5) < 3 * se


def test_censored_matches_full_walk_in_law():
    rng_a = [stopped_local_times(4, 0.5, (-8, 8), s).at(8) for s in range(1500)]
    full = []
    for s in range(1500):
        p = sample_walk(4, 0, inverse_local_time_stop(4, 0, 0.5), 10_000 + s)
        full.append(local_time_profile(p).at(8))
    assert ks_two_sample(SampleSet("censored", rng_a), SampleSet("full", full), 0.01).passed


def test_binary_roundtrip_and_csv():
    p = sample_walk(5, 0, StopRule.after_jumps(100), 4)
    buf = io.BytesIO()
    write_walk_binary(p, buf)
    q = read_walk_binary(io.BytesIO(buf.getvalue()))
    assert np.array_equal(q.sites, p.sites) and np.array_equal(q.holds, p.holds)
    assert q.level == p.level
    out = io.StringIO()
    walk_to_csv(p, out)
    assert out.getvalue().count("\n") == p.n_events + 1


def test_bad_inputs():
    with pytest.raises(ValueError):
        inverse_local_time_stop(3, 0, 0.0)
    with pytest.raises(ValueError):
        StopRule.at_time(-1)
    with pytest.raises(ValueError):
        stopped_local_times(3, 0.5, (1, 4), 0)
