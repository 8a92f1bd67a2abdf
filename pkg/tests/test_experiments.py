import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selfrep import experiments as E
from selfrep.diffusion import OccupationProfile, build_diffusion, transfer_path
from selfrep.rng import child_seed, make_rng


def _report(ex):
    return json.dumps(ex.to_dict(), sort_keys=True)


def test_ray_knight_small_run_is_deterministic():
    a = E.verify_ray_knight(replicas=200, seed=3, threads=1)
    b = E.verify_ray_knight(replicas=200, seed=3, threads=1)
    assert _report(a) == _report(b)
    assert {r.name for r in a.reports} >= set(a.required)
    assert a.samples["lhs"].shape == a.samples["rhs"].shape


def test_threads_do_not_change_results():
    one = E.verify_ray_knight(replicas=120, seed=4, threads=1)
    two = E.verify_ray_knight(replicas=120, seed=4, threads=2)
    assert _report(one) == _report(two)


def test_resolve_threads(monkeypatch):
    monkeypatch.setenv("SELFREP_THREADS", "3")
    assert E.resolve_threads() == 3
    assert E.resolve_threads(0) == 1


def test_race_study_small():
    ex = E.race_study(replicas=300, seed=2, threads=1)
    assert ex.reports[0].extra["expected"] == pytest.approx(np.exp(-1.0))


def test_martingale_study_small():
    ex = E.martingale_study(level=4, replicas=60, seed=1, threads=1)
    assert ex.extra_checks["jump_bound"]
    assert "variance u=0.05" in ex.required


def test_inversion_small_run():
    ex = E.verify_inversion(level=4, replicas=60, seed=1, threads=1)
    assert ex.extra_checks["discard_rate_ok"]
    assert len(ex.reports) >= 4


def test_reversal_small_run():
    ex = E.verify_reversal(replicas=60, seed=1, threads=1)
    assert ex.extra_checks["reversed_terminal_state"]


@settings(max_examples=10)
@given(st.integers(0, 2**31))
def test_stopped_walk_times_are_ordered(seed):
    rng_w = make_rng(child_seed(seed, 1))
    rng_f = make_rng(child_seed(seed, 2))
    s = E.stopped_walk_with_field(4, 0.5, rng_w, rng_f)
    assert s.ok
    assert 0.0 <= s.sigma <= s.tau
    assert s.t_unrev <= s.tau
    assert s.ell.size == s.phi0.size
    # local time at the origin equals the stopping threshold
    assert s.ell[-s.site_min] == pytest.approx(0.5, rel=1e-12)


def test_replay_reproduces_scan():
    seed = 17
    s = E.stopped_walk_with_field(4, 0.5, make_rng(seed), make_rng(seed + 1))
    sites, (lo, hi), segt, segs, overflow = E.replay_walk(4, 0.5, make_rng(seed),
                                                          [0.0, s.tau], seg_start=0.0)
    assert not overflow
    assert lo == s.site_min and hi - lo + 1 == s.ell.size
    assert sites[0] == 0 and segt[0] == 0.0
    # occupation of the replayed segments over the mesh rebuilds the local times
    dur = np.diff(np.append(segt, s.tau))
    occ = np.bincount(segs - lo, weights=dur, minlength=s.ell.size) * 2.0 ** 4
    assert np.allclose(occ, s.ell, rtol=1e-9, atol=1e-12)


def test_transfer_time_change_is_increasing():
    src = OccupationProfile.constant(1.0, -30.0, 30.0, 0.01)
    tgt = OccupationProfile.from_function(lambda x: 1 + 0.5 * np.sin(3 * x), -30.0, 30.0, 0.01)
    tr = build_diffusion(src, 0.0, 2.0, 1e-3, 8)
    moved = transfer_path(tr, tgt, 0.0)
    assert np.all(np.diff(moved.t) >= 0)
    assert moved.T_total >= moved.t[-1]


def test_experiment_passed_logic():
    from selfrep.stats import StatReport
    good = StatReport("good", 0.0, 1.0, 0.01, (1,))
    bad = StatReport("bad", 2.0, 1.0, 0.01, (1,))
    assert E.Experiment("x", [good, bad], {}, required=("good",)).passed
    assert not E.Experiment("x", [good, bad], {}).passed
    assert not E.Experiment("x", [good], {}, extra_checks={"c": False}).passed


def _cross_walk_from_segments(i, level, tscale, t_fixed, seed):
    """Reference: store the reversed segment and run the reversed clock on it."""
    h, rho = 2.0 ** -level, 0.5
    s = E.stopped_walk_with_field(level, rho, E._rng(seed, 51, i), E._rng(seed, 52, i))
    _, _, segt, segs, overflow = E.replay_walk(level, rho, E._rng(seed, 51, i), [],
                                               seg_start=s.sigma)
    assert s.ok and not overflow
    root = np.sqrt(s.phi0 ** 2 + 2.0 * s.ell)
    S = np.concatenate(([0.0], np.cumsum(h / (root[:-1] * root[1:]))))
    S -= S[-s.site_min]
    idx = segs - s.site_min
    dur = np.concatenate((segt[1:], [s.tau])) - segt
    xt = tscale.inverse(S[idx])
    theta = np.cumsum((tscale.profile(xt) ** 2 / root[idx] ** 4 * dur)[::-1])
    j = min(int(np.searchsorted(theta, t_fixed, side="right")), theta.size - 1)
    return xt[::-1][j], theta[-1]


def test_cross_walk_side_matches_stored_segment():
    prof = OccupationProfile.from_roots(-3.0, 0.5, np.array(
        [1, 1.5, 2, 1, 0.5, 1, 1.2, 1, 1, 1, 1, 1, 1.0]))
    tscale = E.scale_from_profile(prof, 0.0)
    for i in range(40):
        ok, x, total = E._cross_walk_side(i, 1.0, 4, tscale, 0.1, 7)
        assert ok
        x_ref, total_ref = _cross_walk_from_segments(i, 4, tscale, 0.1, 7)
        assert x == x_ref
        assert total == pytest.approx(total_ref, rel=1e-12)


def test_cross_representation_small_run():
    ex = E.verify_cross_representation(replicas=60, seed=2, threads=1)
    assert ex.required == ("position",)
    assert [r.name for r in ex.reports] == ["position", "duration"]
    ok = ex.samples["walk"][:, 0] > 0
    assert np.all(ex.samples["walk"][ok, 2] > 0)
