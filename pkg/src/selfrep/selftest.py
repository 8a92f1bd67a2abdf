"""Fast exact sanity checks run by ``selfrep selftest``.

Each check is deterministic given the seed and asserts an identity that holds
exactly (or to rounding) by construction.
"""
import math

import numpy as np

from .brownian import (LatticeWalkPath, StopRule, inverse_local_time_stop, local_time_profile,
                       reverse_path, sample_walk, stopped_local_times)
from .diffusion import OccupationProfile, build_diffusion, scale_from_profile, transfer_path
from .discrete import run_lattice_selfrep, run_reversed_triple
from .experiments import stopped_walk_with_field
from .field import interpolate_conditioned_field, positivity_component, sample_besq, sample_gff
from .flow import constant_driver, evolve_flow
from .rng import make_rng
from .stats import SampleSet, ks_two_sample


def _walk_one_jump(seed):
    p = sample_walk(0, 0, StopRule.after_jumps(1), seed)
    return p.n_events == 2 and abs(int(p.sites[1])) == 1


def _local_time_bookkeeping(seed):
    p = sample_walk(4, 0, StopRule.at_time(1.0), seed)
    zero = local_time_profile(p, 0.0)
    full = local_time_profile(p, p.total_time)
    return not np.any(zero.values) and math.isclose(full.occupation(), p.total_time, rel_tol=1e-12)


def _single_hold_profile(_):
    prof = local_time_profile(LatticeWalkPath(0, np.array([0]), np.array([1.0])), 1.0)
    return prof.at(0) == 1.0 and prof.occupation() == 1.0


def _reverse_twice(seed):
    p = sample_walk(5, 0, inverse_local_time_stop(5, 0, 0.5), seed)
    r = reverse_path(reverse_path(p))
    still = LatticeWalkPath(0, np.array([3]), np.array([2.0]))
    rs = reverse_path(still)
    return (np.array_equal(r.sites, p.sites) and np.array_equal(r.holds, p.holds)
            and np.array_equal(rs.sites, still.sites) and np.array_equal(rs.holds, still.holds)
            and int(reverse_path(p).sites[-1]) == 0)


def _zero_field(seed):
    return sample_gff(0.0, 6, 1.0, seed).at_site(0) == 0.0


def _positive_window(seed):
    f = sample_gff(50.0, 4, 1.0, seed)
    c = positivity_component(f)
    return c.left_unbounded and c.right_unbounded


def _absorbed_besq(seed):
    return not np.any(sample_besq(0.0, 0.0, np.linspace(0.1, 2.0, 20), seed).values)


def _anchors_kept(seed):
    ax = np.array([-0.5, 0.0, 0.75])
    av = np.array([0.3, 1.0, 0.2])
    f = interpolate_conditioned_field(ax, av, 4, seed)
    return np.array_equal(f.at(ax), av)


def _flat_driver(_):
    d = constant_driver(1e-3, 500)
    fl = evolve_flow(d, np.array([-1.0, 0.0, 1.0]))
    u = fl.u
    return (np.allclose(fl.psi[:, 2], 1 + u, rtol=0, atol=1e-12)
            and np.allclose(fl.psi[:, 0], -1 - u, rtol=0, atol=1e-12)
            and not np.any(fl.psi[:, 1]))


def _constant_scale(_):
    c = 2.5
    s = scale_from_profile(OccupationProfile.constant(c, -3.0, 3.0, 0.01), 0.4)
    x = np.linspace(-2.9, 2.9, 57)
    return s(0.4) == 0.0 and np.allclose(s(x), (x - 0.4) / c, rtol=0, atol=1e-12)


def _identity_transfer(seed):
    p = OccupationProfile.constant(1.0, -30.0, 30.0, 0.01)
    tr = build_diffusion(p, 0.0, 2.0, 1e-4, seed)
    moved = transfer_path(tr, p, 0.0)
    return (np.max(np.abs(moved.t - tr.t)) < 1e-9 and np.max(np.abs(moved.x - tr.x)) < 1e-9
            and tr.x[0] == 0.0)


def _drained_mass(seed):
    level = 5
    log = run_lattice_selfrep(level, OccupationProfile.constant(1.0, -2.0, 2.0, 0.01), 0.1, seed)
    lost = log.profile.lam - log.final_lam
    return np.allclose(lost, 2.0 ** (level + 1) * log.occupation(), rtol=0, atol=1e-9)


def _isolated_drain(seed):
    x = np.array([-0.5, 0.0, 0.5])
    phi = np.array([0.7, 1.3, 0.4])
    log, _ = run_reversed_triple(x, phi, seed, open_edges=np.zeros(2, dtype=np.int8))
    return math.isclose(log.q_end, 0.5 * 1.3 ** 2, rel_tol=1e-12)


def _ks_identical(seed):
    v = make_rng(seed).standard_normal(200)
    r = ks_two_sample(SampleSet("a", v), SampleSet("b", v))
    coins = np.tile([0.0, 1.0], 500)
    r2 = ks_two_sample(SampleSet("a", coins), SampleSet("b", coins[::-1]))
    return r.statistic == 0.0 and r.passed and r2.statistic == 0.0


def _stopping_at_origin(seed):
    ell = stopped_local_times(6, 0.5, (-8, 8), seed)
    return math.isclose(ell.at(0), 0.5, rel_tol=1e-12)


def _duration_bounded(seed):
    rng = make_rng(seed)
    for _ in range(5):
        s = stopped_walk_with_field(5, 0.5, rng, rng)
        if not (0.0 <= s.tau - s.sigma <= s.tau and s.t_unrev <= s.tau):
            return False
    return True


CHECKS = {
    "walk stops after one jump": _walk_one_jump,
    "local time bookkeeping": _local_time_bookkeeping,
    "single hold profile": _single_hold_profile,
    "reversal is an involution": _reverse_twice,
    "zero boundary value": _zero_field,
    "positive window is unbounded": _positive_window,
    "dimension zero absorbed at 0": _absorbed_besq,
    "anchors kept by interpolation": _anchors_kept,
    "flat driver moves lines at unit speed": _flat_driver,
    "constant profile has affine scale": _constant_scale,
    "identity transfer": _identity_transfer,
    "drained mass identity": _drained_mass,
    "isolated site drains exactly": _isolated_drain,
    "identical samples give zero distance": _ks_identical,
    "local time at origin equals threshold": _stopping_at_origin,
    "duration bounded by stopping time": _duration_bounded,
}


def run_selftest(seed=0):
    """Run every check; returns ``{name: passed}``."""
    out = {}
    for i, (name, fn) in enumerate(CHECKS.items()):
        try:
            out[name] = bool(fn(make_rng(seed, i)))
        except Exception:  # a crash is a failure, reported by name
            out[name] = False
    return out
