import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from selfrep.diffusion import (EXHAUSTED, EXIT_LEFT, EXIT_RIGHT, OccupationProfile,
                               build_diffusion, exit_race, race, scale_from_profile,
                               transfer_path)
from selfrep.stats import proportion_report

roots = st.lists(st.floats(0.3, 3.0), min_size=3, max_size=12)


def test_constant_profile_scale_is_affine():
    s = scale_from_profile(OccupationProfile.constant(2.5, -3.0, 3.0, 0.01), 0.4)
    x = np.linspace(-2.9, 2.9, 57)
    assert s(0.4) == 0.0
    assert np.allclose(s(x), (x - 0.4) / 2.5, atol=1e-12)


@given(roots, st.floats(0.05, 0.95))
def test_scale_matches_quadrature(vals, frac):
    p = OccupationProfile.from_roots(-1.0, 0.5, vals)
    lo, hi = p.interval
    x0 = lo + frac * (hi - lo)
    s = scale_from_profile(p, x0)
    for x in np.linspace(lo, hi, 7):
        ref = quad(lambda r: 1.0 / p(r), x0, x, points=list(p.x[1:-1]), limit=200)[0]
        assert s(x) == pytest.approx(ref, rel=1e-9, abs=1e-12)


@given(roots, st.floats(0.05, 0.95))
def test_scale_inverse_roundtrip(vals, frac):
    p = OccupationProfile.from_roots(0.0, 0.25, vals)
    lo, hi = p.interval
    s = scale_from_profile(p, lo + frac * (hi - lo))
    x = np.linspace(lo, hi, 41)
    assert np.allclose(s.inverse(s(x)), x, atol=1e-10)
    assert np.allclose(s.sqrt_profile_at(s(x)), p.sqrt_at(x), atol=1e-10)


def test_zero_end_makes_scale_unbounded():
    p = OccupationProfile.from_roots(0.0, 1.0, [-0.5, 1.0, 1.0, 1.0])
    s = scale_from_profile(p, 2.0)
    assert s.y_range[0] == -math.inf and math.isfinite(s.y_range[1])
    assert p.interval[0] == pytest.approx(1 / 3)


def test_build_on_unit_profile():
    p = OccupationProfile.constant(1.0, -30.0, 30.0, 0.01)
    tr = build_diffusion(p, 0.0, 3.0, 1e-4, 5)
    assert tr.x[0] == 0.0 and tr.t[0] == 0.0
    assert np.all(np.diff(tr.t) >= 0)
    assert tr.flags["time_bound_ok"]
    # with lam0 = 1 the scale is the identity
    assert np.allclose(tr.x, tr.xi, atol=1e-12)
    assert np.all(tr.final_lam <= p.lam + 1e-12)


@given(st.integers(0, 2**31))
def test_exhaustion_time_bound(seed):
    p = OccupationProfile.from_function(lambda x: 1 + 0.5 * np.sin(3 * x), -30.0, 30.0, 0.01)
    tr = build_diffusion(p, 0.0, 2.0, 1e-3, seed)
    ymin, ymax = tr.xi.min() - tr.y_spacing, tr.xi.max() + tr.y_spacing
    lam_max = max(p(tr.scale.inverse(np.linspace(ymin, ymax, 400))))
    assert tr.T_total <= 0.5 * (ymax - ymin) * lam_max ** 2 * (1 + 1e-9)
    assert tr.T_eps <= tr.T_total + 1e-12


def test_identity_transfer():
    p = OccupationProfile.constant(1.0, -30.0, 30.0, 0.01)
    tr = build_diffusion(p, 0.0, 2.0, 1e-4, 3)
    moved = transfer_path(tr, p, 0.0)
    assert np.allclose(moved.t, tr.t, atol=1e-12)
    assert np.allclose(moved.x, tr.x, atol=1e-12)


def test_constant_transfer_scales_space_and_time():
    # lam0 = c gives X = c * xi and time c^2 * time: positions x4, times x16
    src = OccupationProfile.constant(1.0, -30.0, 30.0, 0.01)
    tgt = OccupationProfile.constant(4.0, -120.0, 120.0, 0.04)
    tr = build_diffusion(src, 0.0, 2.0, 1e-4, 9)
    moved = transfer_path(tr, tgt, 0.0)
    assert np.allclose(moved.x, 4 * tr.x, atol=1e-9)
    assert np.allclose(moved.t, 16 * tr.t, rtol=1e-9, atol=1e-12)
    assert moved.T_total == pytest.approx(16 * tr.T_total, rel=1e-9)


def test_transfer_needs_full_records():
    p = OccupationProfile.constant(1.0, -30.0, 30.0, 0.01)
    tr = build_diffusion(p, 0.0, 1.0, 1e-3, 3, rec_stride=4)
    with pytest.raises(ValueError):
        transfer_path(tr, p, 0.0)


def test_race_symmetry():
    # some runs exhaust before either target; among the decided ones the split is fair
    outs = [race(0.3, -0.3, s)[0] for s in range(3000)]
    right, left = outs.count(EXIT_RIGHT), outs.count(EXIT_LEFT)
    assert proportion_report(right, right + left, 0.5, "symmetric race").passed


def test_one_sided_race_probability():
    n = 3000
    hits = sum(race(0.5, -math.inf, s)[0] == EXIT_RIGHT for s in range(n))
    assert proportion_report(hits, n, math.exp(-1.0), "one-sided race").passed


def test_race_can_be_exhausted_and_validates():
    outcomes = {race(5.0, -5.0, s)[0] for s in range(20)}
    assert outcomes == {EXHAUSTED}
    with pytest.raises(ValueError):
        race(-1.0, -2.0, 0)


def test_exit_race_uses_scale():
    p = OccupationProfile.constant(1.0, -10.0, 10.0, 0.01)
    got = {exit_race(p, 0.0, -0.01, 0.01, s) for s in range(50)}
    assert got <= {EXIT_LEFT, EXIT_RIGHT} and len(got) == 2
    with pytest.raises(ValueError):
        exit_race(p, 0.0, -20.0, 1.0, 0)


def test_requires_seed_and_valid_start():
    p = OccupationProfile.constant(1.0, -1.0, 1.0, 0.01)
    with pytest.raises(ValueError):
        build_diffusion(p, 0.0)
    with pytest.raises(ValueError):
        scale_from_profile(p, 1.0)
    with pytest.raises(ValueError):
        OccupationProfile.from_roots(0.0, 1.0, [1.0, -1.0, 1.0])
