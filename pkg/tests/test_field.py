import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from selfrep.field import (ScalarField, first_zero, interpolate_conditioned_field,
                           positive_bridge, positivity_component, read_field_binary, sample_besq,
                           sample_gff, write_field_binary, zero_probability)
from selfrep.stats import SampleSet, ks_two_sample


def test_zero_boundary_value_is_exact():
    assert sample_gff(0.0, 6, 2.0, 1).at(0.0) == 0.0


def test_field_covariance():
    n = 6000
    vals = np.array([sample_gff(0.0, 4, 1.0, s).at([0.5, 1.0, -0.25]) for s in range(n)])
    cov = np.mean(vals[:, 0] * vals[:, 1])
    # Var(xy) = var(x) var(y) + cov^2 - cov^2 for centred jointly Gaussian x, y
    var_prod = 1.0 * 2.0
    assert abs(cov - 1.0) < 3 * math.sqrt(var_prod / n)
    assert abs(np.mean(vals[:, 0] * vals[:, 2])) < 3 * math.sqrt(1.0 * 0.5 / n)


def test_positivity_component_edges():
    f = ScalarField(0, -2, np.array([1.0, 2.0, 3.0, -0.5, 4.0]))
    c = positivity_component(f)
    assert (c.left_site, c.right_site) == (-3, 1)
    assert c.left_unbounded and not c.right_unbounded
    assert c.contains(0) and not c.contains(1)
    full = positivity_component(sample_gff(40.0, 3, 1.0, 0))
    assert full.left_unbounded and full.right_unbounded


def test_first_zero_law():
    # right end of the positive component vs direct first passage of the field
    level = 5
    h = 2.0 ** -level
    ends = []
    for s in range(1500):
        f = sample_gff(1.0, level, 40.0, s)
        c = positivity_component(f)
        if not c.right_unbounded:
            ends.append(c.right_site * h)
    rng = np.random.default_rng(123)
    direct = []
    while len(direct) < 1500:
        path = 1.0 + np.cumsum(rng.standard_normal(int(40 / h)) * math.sqrt(2 * h))
        hit = np.flatnonzero(path <= 0)
        if hit.size:
            direct.append((hit[0] + 1) * h)
    assert ks_two_sample(SampleSet("component", ends), SampleSet("direct", direct), 0.01).passed


def test_besq_absorbed_and_means():
    assert not np.any(sample_besq(0.0, 0.0, [0.5, 1.0], 0).values)
    n = 5000
    zero = np.array([sample_besq(0.0, 0.5, [0.3, 1.0], s).values for s in range(n)])
    se = zero.std(axis=0, ddof=1) / math.sqrt(n)
    assert np.all(np.abs(zero.mean(axis=0) - 0.5) < 3 * se)
    one = np.array([sample_besq(1.0, 0.0, [0.7], s).values[0] for s in range(n)])
    # mean z + dim * x
    assert abs(one.mean() - 0.7) < 3 * one.std(ddof=1) / math.sqrt(n)


def test_besq_euler_oracle():
    # exact sampler against a fine Euler scheme for the same generator
    n = 1500
    exact = np.array([sample_besq(2.0, 0.5, [0.5], s).values[0] for s in range(n)])
    rng = np.random.default_rng(7)
    z = np.full(n, 0.5)
    dt = 1e-3
    for _ in range(500):
        z = np.abs(z + 2.0 * dt + 2.0 * np.sqrt(np.maximum(z, 0) * dt) * rng.standard_normal(n))
    assert ks_two_sample(SampleSet("exact", exact), SampleSet("euler", z), 0.01).passed


@given(st.integers(0, 2**31))
def test_anchors_are_kept(seed):
    ax = np.array([-0.5, 0.0, 0.25, 1.0])
    av = np.array([0.4, 1.0, 0.1, 2.0])
    f = interpolate_conditioned_field(ax, av, 4, seed)
    assert np.array_equal(f.at(ax), av)
    inner = f.window(int(ax[0] * 16), int(ax[-1] * 16))
    assert np.all(inner > 0)


def test_bridge_rejection_and_bessel_agree():
    n = 4000
    rej = np.array([positive_bridge(0.5, 0.5, 16, 1 / 16, s)[0][7] for s in range(n)])
    from selfrep.field import _bessel3_bridge
    rng = np.random.default_rng(3)
    out = np.empty(15)
    b3 = []
    for _ in range(n):
        _bessel3_bridge(rng, 0.5, 0.5, 16, 2 / 16, out)
        b3.append(out[7])
    assert ks_two_sample(SampleSet("rejection", rej), SampleSet("bessel3", b3), 0.01).passed


def test_low_anchors_switch_to_bessel():
    _, how = positive_bridge(1e-3, 1e-3, 64, 1 / 64, 0, max_tries=5)
    assert how == "bessel3"
    vals, how = positive_bridge(2.0, 2.0, 4, 1 / 64, 0)
    assert how == "rejection" and np.all(vals > 0)


def test_conditioned_midpoint_dominates_plain():
    n = 3000
    cond = [positive_bridge(0.3, 0.3, 32, 1 / 32, s)[0][15] for s in range(n)]
    rng = np.random.default_rng(5)
    plain = 0.3 + rng.standard_normal(n) * math.sqrt(2 * 0.5 * 0.5)
    assert np.quantile(cond, 0.25) > np.quantile(plain, 0.25)
    assert np.mean(cond) > np.mean(plain)


def test_binary_roundtrip():
    f = sample_gff(1.0, 5, 1.0, 4)
    buf = io.BytesIO()
    write_field_binary(f, buf)
    g = read_field_binary(io.BytesIO(buf.getvalue()))
    assert g.site_min == f.site_min and np.array_equal(g.values, f.values)


def test_invalid():
    with pytest.raises(ValueError):
        sample_gff(-1.0, 3, 1.0, 0)
    with pytest.raises(ValueError):
        interpolate_conditioned_field([0.1, 0.5], [1.0, 1.0], 3, 0)
    with pytest.raises(ValueError):
        positive_bridge(0.0, 1.0, 4, 0.25, 0)
    with pytest.raises(ValueError):
        ScalarField(0, 1, np.ones(3))


def _first_zero_cdf(a, b, dx):
    from scipy.integrate import quad

    def dens(t):
        # first passage to 0 from a, times the transition from 0 to b
        return a * t ** -1.5 * math.exp(-a * a / (4 * t)) * (dx - t) ** -0.5 \
            * math.exp(-b * b / (4 * (dx - t)))
    total = quad(dens, 0, dx, limit=400)[0]
    return lambda t: quad(dens, 0, t, limit=400)[0] / total


@pytest.mark.parametrize("a,b,dx", [(0.3, 0.2, 0.1), (0.3, -0.2, 0.1), (0.5, 0.0, 0.2),
                                    (0.05, 0.4, 1 / 64)])
def test_first_zero_matches_passage_density(a, b, dx):
    from scipy import stats as sps
    rng = np.random.default_rng(11)
    x = np.array([first_zero(a, b, dx, rng) for _ in range(2000)])
    assert np.all((x > 0) & (x <= dx))
    assert sps.kstest(x, np.vectorize(_first_zero_cdf(a, b, dx))).pvalue > 0.001


def test_zero_probability_matches_quadrature():
    from scipy.integrate import quad
    a, b, dx = 0.3, 0.2, 0.1
    # P(hit) = int first-passage density * p_{dx-t}(0, b) dt / p_dx(a, b), variance 2 per unit
    p = lambda s, x, y: math.exp(-(y - x) ** 2 / (4 * s)) / math.sqrt(4 * math.pi * s)
    fp = lambda t: a / math.sqrt(4 * math.pi * t ** 3) * math.exp(-a * a / (4 * t))
    hit = quad(lambda t: fp(t) * p(dx - t, 0.0, b), 0, dx, limit=400)[0] / p(dx, a, b)
    assert float(zero_probability(a, b, dx)) == pytest.approx(hit, rel=1e-7)
    assert float(zero_probability(0.3, -0.1, dx)) == 1.0


@given(st.integers(0, 2**31))
def test_component_ends_at_a_zero(seed):
    from selfrep.experiments import gff_component
    p = gff_component(1.0, 5, seed)
    lo, hi = p.interval
    assert lo < 0 < hi
    assert np.all(p.root[1:-1] > 0)
    assert p.root[p.x.tolist().index(0.0)] == 1.0
    # the interpolant vanishes at each end that closes inside the window
    for end in (lo, hi):
        if p.left_closed and end == lo or p.right_closed and end == hi:
            assert float(p.sqrt_at(end)) == pytest.approx(0.0, abs=1e-9)
