"""Statistical experiments comparing the constructions against each other.

Every experiment is a pure function of its parameters and a seed.  Replica
``i`` of side ``s`` draws from the stream ``(child_seed(seed, s), i)``, so the
outcome does not depend on how replicas are spread over worker processes.
"""
import functools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._accel import jit
from .brownian import stopped_local_times
from .diffusion import (DEFAULT_DU, OccupationProfile, build_diffusion, race,
                        scale_from_profile, transfer_path)
from .discrete import (edges_from_field, martingale_diagnostics, run_forward_triple,
                       run_lattice_selfrep, run_reversed_triple)
from .field import first_zero, sample_gff, zero_probability
from .flow import GridExhausted
from .rng import child_seed, make_rng
from .stats import (SampleSet, StatReport, ks_two_sample, mean_report, proportion_report)

MAX_DISCARD = 0.05


@dataclass
class Experiment:
    """Reports of one experiment plus bookkeeping."""
    name: str
    reports: list
    params: dict
    counts: dict = field(default_factory=dict)
    samples: dict = field(default_factory=dict)
    required: tuple = ()
    extra_checks: dict = field(default_factory=dict)

    @property
    def passed(self):
        names = set(self.required) if self.required else None
        ok = all(r.passed for r in self.reports if names is None or r.name in names)
        return ok and all(self.extra_checks.values())

    def to_dict(self):
        from .stats import _jsonable
        return _jsonable({
            "experiment": self.name, "passed": self.passed, "params": self.params,
            "counts": self.counts, "checks": self.extra_checks,
            "required": list(self.required),
            "reports": [r.to_dict() for r in self.reports],
        })


def resolve_threads(threads=None):
    if threads is None:
        env = os.environ.get("SELFREP_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def map_replicas(fn, n, threads=None):
    """``[fn(i) for i in range(n)]``, optionally spread over processes (order kept)."""
    threads = resolve_threads(threads)
    if threads == 1 or n < 2:
        return [fn(i) for i in range(n)]
    chunk = max(1, n // (8 * threads))
    with ProcessPoolExecutor(threads) as ex:
        return list(ex.map(fn, range(n), chunksize=chunk))


def _rng(seed, side, i):
    return make_rng(child_seed(seed, side), i)


# ---------------------------------------------------------------------------
# Ray-Knight identity

def _rk_replica(i, a, level, ks, seed):
    h = 2.0 ** -level
    kmax = int(np.max(np.abs(ks)))
    phi0 = sample_gff(0.0, level, max(kmax, 1) * h, _rng(seed, 1, i))
    lo, hi = min(0, int(np.min(ks))), max(0, int(np.max(ks)))
    ell = stopped_local_times(level, 0.5 * a * a, (lo, hi), _rng(seed, 2, i))
    phia = sample_gff(a, level, max(kmax, 1) * h, _rng(seed, 3, i))
    lhs = 0.5 * phi0.at_site(ks) ** 2 + np.array([ell.at(k) for k in ks])
    rhs = 0.5 * phia.at_site(ks) ** 2
    return lhs, rhs


def verify_ray_knight(a=1.0, level=6, sites=(0.25, 0.5, 1.0), replicas=10_000, seed=0,
                      alpha=0.01, threads=None):
    """Squared zero-field plus stopped local times against the squared ``a``-field."""
    if not a > 0:
        raise ValueError("a must be positive")
    h = 2.0 ** -level
    ks = np.rint(np.asarray(sites, dtype=float) / h).astype(np.int64)
    if np.any(np.abs(ks * h - np.asarray(sites)) > 1e-12):
        raise ValueError("sites must lie on the lattice")
    out = map_replicas(functools.partial(_rk_replica, a=a, level=level, ks=ks, seed=seed),
                       replicas, threads)
    lhs = np.array([o[0] for o in out])
    rhs = np.array([o[1] for o in out])
    params = {"a": a, "level": level, "sites": list(sites), "replicas": replicas, "seed": seed}
    reports = []
    a_site = alpha / len(sites)
    for j, x in enumerate(sites):
        A = SampleSet(f"lhs(x={x})", lhs[:, j])
        B = SampleSet(f"rhs(x={x})", rhs[:, j])
        reports.append(ks_two_sample(A, B, a_site, name=f"ks x={x}", params=params))
    means = []
    for j, x in enumerate(sites):
        means.append(mean_report(rhs[:, j], 0.5 * a * a + abs(x), f"mean rhs x={x}"))
        means.append(mean_report(lhs[:, j], 0.5 * a * a + abs(x), f"mean lhs x={x}"))
    exp = Experiment("ray_knight", reports + means, params,
                     samples={"lhs": lhs, "rhs": rhs},
                     required=tuple(r.name for r in reports))
    return exp


# ---------------------------------------------------------------------------
# free field component around 0 as an occupation profile

def gff_component(a, level, rng, half_width=16.0, max_half_width=4096.0):
    """Sample the ``a``-field and return its positivity component around 0.

    Lattice values alone miss zeros strictly inside a cell whose end values
    share a sign; those are drawn from the bridge law, and the first zero on
    each side (sampled exactly inside its cell) ends the component.  The
    returned :class:`OccupationProfile` has the lattice values inside and an
    end node chosen so that the interpolant vanishes at that zero.  If no zero
    occurs within ``max_half_width`` the window edge is used.
    """
    rng = make_rng(rng)
    h = 2.0 ** -level
    sd = math.sqrt(2.0 * h)
    cap = int(math.ceil(max_half_width / h))
    sides = []
    for _ in range(2):
        vals = np.array([a])
        block = int(math.ceil(half_width / h))
        hit = -1
        while hit < 0 and vals.size <= cap:
            new = vals[-1] + np.cumsum(rng.standard_normal(block) * sd)
            prev = np.concatenate((vals[-1:], new[:-1]))
            zero = rng.random(block) < zero_probability(prev, new, h)
            vals = np.concatenate((vals, new))
            if zero.any():
                hit = vals.size - block - 1 + int(np.argmax(zero))
            block = vals.size
        if hit < 0:
            sides.append(vals[:cap + 1])
            continue
        t = first_zero(vals[hit], vals[hit + 1], h, rng)
        end = vals[hit] * (1.0 - h / t) if t > 0 else -1.0
        sides.append(np.append(vals[:hit + 1], end))
    right, left = sides
    roots = np.concatenate((left[:0:-1], right))
    return OccupationProfile.from_roots(-(left.size - 1) * h, h, roots)


# ---------------------------------------------------------------------------
# walk stopped at an inverse local time, with a lazily sampled zero field

@jit
def _cell_has_zero(rng, p, q, h):
    # a sign change, or a same-sign field bridge dipping to 0 inside the cell
    if p * q <= 0.0:
        return True
    return rng.random() < math.exp(-p * q / h)


@jit
def _scan_walk(rng_w, rng_f, level, rho, max_steps, cap_sites):
    rate = 4.0 ** level
    scale = 2.0 ** level
    h = 2.0 ** -level
    sd = math.sqrt(2.0 * h)
    off = cap_sites
    size = 2 * cap_sites + 1
    phi = np.zeros(size)
    ell = np.zeros(size)
    lastcross = np.full(size, -1.0)  # edge (k, k+1) stored at k + off
    zero_edge = np.zeros(size, dtype=np.bool_)
    kmin = 0
    kmax = 0
    x = 0
    t = 0.0
    sigma = 0.0
    steps = 0
    status = 0
    while True:
        hold = rng_w.standard_exponential() / rate
        if x == 0 and ell[off] + hold * scale >= rho:
            t += (rho - ell[off]) / scale
            ell[off] = rho
            break
        ell[x + off] += hold * scale
        t += hold
        steps += 1
        if steps >= max_steps:
            status = 1
            break
        if rng_w.random() < 0.5:
            lastcross[x + off] = t
            x += 1
            if x > kmax:
                if x >= cap_sites:
                    status = 2
                    break
                kmax = x
                phi[x + off] = phi[x - 1 + off] + sd * rng_f.standard_normal()
                if _cell_has_zero(rng_f, phi[x - 1 + off], phi[x + off], h):
                    zero_edge[x - 1 + off] = True
                    sigma = t
        else:
            x -= 1
            lastcross[x + off] = t
            if x < kmin:
                if -x >= cap_sites:
                    status = 2
                    break
                kmin = x
                phi[x + off] = phi[x + 1 + off] + sd * rng_f.standard_normal()
                if _cell_has_zero(rng_f, phi[x + 1 + off], phi[x + off], h):
                    zero_edge[x + off] = True
                    sigma = t
    tau = t
    t_unrev = tau
    for k in range(kmin, kmax):
        if zero_edge[k + off] and lastcross[k + off] < t_unrev:
            t_unrev = lastcross[k + off]
    return (status, tau, sigma, t_unrev, kmin, kmax,
            phi[kmin + off: kmax + off + 1].copy(), ell[kmin + off: kmax + off + 1].copy())


@jit
def _replay_walk(rng_w, level, rho, max_steps, qtimes, seg_start, seg_cap):
    rate = 4.0 ** level
    scale = 2.0 ** level
    nq = qtimes.shape[0]
    qs = np.zeros(nq, dtype=np.int64)
    qi = 0
    seg_t = np.empty(seg_cap)
    seg_s = np.empty(seg_cap, dtype=np.int64)
    ns = 0
    overflow = False
    ell0 = 0.0
    x = 0
    t = 0.0
    steps = 0
    seg_min = 0
    seg_max = 0
    in_seg = False
    while True:
        hold = rng_w.standard_exponential() / rate
        stop = False
        if x == 0 and ell0 + hold * scale >= rho:
            hold = (rho - ell0) / scale
            stop = True
        elif x == 0:
            ell0 += hold * scale
        if not in_seg and t + hold > seg_start:
            in_seg = True
            seg_min = x
            seg_max = x
            if ns < seg_cap:
                seg_t[ns] = seg_start
                seg_s[ns] = x
                ns += 1
        while qi < nq and qtimes[qi] < t + hold:
            qs[qi] = x
            qi += 1
        t += hold
        steps += 1
        if stop or steps >= max_steps:
            break
        if rng_w.random() < 0.5:
            x += 1
        else:
            x -= 1
        if in_seg:
            if x < seg_min:
                seg_min = x
            if x > seg_max:
                seg_max = x
            if ns < seg_cap:
                seg_t[ns] = t
                seg_s[ns] = x
                ns += 1
            else:
                overflow = True
    while qi < nq:
        qs[qi] = x
        qi += 1
    return qs, seg_min, seg_max, seg_t[:ns].copy(), seg_s[:ns].copy(), overflow, t


@jit
def _replay_weighted(rng_w, level, rho, max_steps, seg_start, weight, kmin, cut):
    """Replay the walk and integrate ``weight[site - kmin]`` over time after ``seg_start``.

    Returns the integral and the site held while the running integral crosses
    ``cut`` (the site at ``seg_start`` if ``cut <= 0``).
    """
    rate = 4.0 ** level
    scale = 2.0 ** level
    ell0 = 0.0
    x = 0
    t = 0.0
    steps = 0
    acc = 0.0
    site_at = 0
    found = False
    while True:
        hold = rng_w.standard_exponential() / rate
        stop = False
        if x == 0 and ell0 + hold * scale >= rho:
            hold = (rho - ell0) / scale
            stop = True
        elif x == 0:
            ell0 += hold * scale
        if t + hold > seg_start:
            dt = t + hold - max(t, seg_start)
            nxt = acc + weight[x - kmin] * dt
            if not found and (cut <= acc or cut <= nxt):
                site_at = x
                found = True
            acc = nxt
        t += hold
        steps += 1
        if stop or steps >= max_steps:
            break
        if rng_w.random() < 0.5:
            x += 1
        else:
            x -= 1
    if not found:
        site_at = x
    return acc, site_at


@dataclass(frozen=True)
class StoppedWalkSample:
    """Walk from 0 stopped when its local time at 0 reaches ``rho``, with a zero field.

    A cell holds a zero of the field if its end values differ in sign or, given
    equal signs, with the bridge probability ``exp(-phi1 phi2 / h)``.
    ``sigma`` is the last first-arrival across such a cell, ``t_unrev`` the
    first last-crossing of one (the mirror notion along the unreversed path);
    ``tau`` the stopping time.
    """
    ok: bool
    tau: float
    sigma: float
    t_unrev: float
    site_min: int
    phi0: np.ndarray
    ell: np.ndarray


def stopped_walk_with_field(level, rho, rng_walk, rng_field, max_steps=10**8, cap_sites=1 << 17):
    st, tau, sigma, t_un, kmin, kmax, phi, ell = _scan_walk(
        rng_walk, rng_field, int(level), float(rho), int(max_steps), int(cap_sites))
    return StoppedWalkSample(st == 0, tau, sigma, t_un, int(kmin), phi, ell)


def replay_walk(level, rho, rng_walk, query_times, seg_start=np.inf, seg_cap=1 << 20,
                max_steps=10**8):
    q = np.asarray(query_times, dtype=float)
    order = np.argsort(q)
    qs, smin, smax, segt, segs, overflow, tau = _replay_walk(
        rng_walk, int(level), float(rho), int(max_steps), q[order], float(seg_start), int(seg_cap))
    sites = np.empty_like(qs)
    sites[order] = qs
    return sites, (int(smin), int(smax)), segt, segs, bool(overflow)


# ---------------------------------------------------------------------------
# inversion

def _inversion_side1(i, a, level, horizon, du, seed):
    prof = gff_component(a, level, _rng(seed, 11, i))
    try:
        tr = build_diffusion(prof, 0.0, horizon, du, _rng(seed, 12, i))
    except GridExhausted:
        return (False, np.nan, np.nan, np.nan, np.nan)
    ok = tr.converged and not tr.boundary_hit
    T = tr.T_total
    half = float(tr.position_at(0.5 * T))
    return (ok, T, half, tr.x_end, float(tr.x.max() - tr.x.min()))


def _inversion_side2(i, a, level, seed):
    h = 2.0 ** -level
    rho = 0.5 * a * a
    s = stopped_walk_with_field(level, rho, _rng(seed, 21, i), _rng(seed, 22, i))
    if not s.ok:
        return (False,) + (np.nan,) * 7
    T = s.tau - s.sigma
    q = [0.5 * (s.tau + s.sigma), s.sigma, 0.5 * s.t_unrev, s.t_unrev]
    sites, (smin, smax), _, _, _ = replay_walk(level, rho, _rng(seed, 21, i), q, seg_start=s.sigma)
    return (True, T, sites[0] * h, sites[1] * h, (smax - smin) * h,
            s.t_unrev, sites[2] * h, sites[3] * h)


def verify_inversion(a=1.0, level=6, replicas=5000, seed=0, alpha=0.01, horizon=20.0,
                     du=DEFAULT_DU, threads=None, unreversed=True):
    """Flow-built diffusion on the squared ``a``-field against the reversed stopped walk."""
    if not a > 0:
        raise ValueError("a must be positive")
    s1 = map_replicas(functools.partial(_inversion_side1, a=a, level=level, horizon=horizon,
                                        du=du, seed=seed), replicas, threads)
    s2 = map_replicas(functools.partial(_inversion_side2, a=a, level=level, seed=seed),
                      replicas, threads)
    s1 = np.array(s1, dtype=float)
    s2 = np.array(s2, dtype=float)
    ok1 = s1[:, 0] > 0
    ok2 = s2[:, 0] > 0
    params = {"a": a, "level": level, "replicas": replicas, "seed": seed, "horizon": horizon,
              "du": du}
    counts = {"side1_discarded": int((~ok1).sum()), "side2_discarded": int((~ok2).sum())}
    A1 = s1[ok1]
    A2 = s2[ok2]
    names = [("duration", 1, 1), ("half_position", 2, 2), ("endpoint", 3, 3), ("range", 4, 4)]
    required = ["duration", "half_position"]
    a_req = alpha / len(required)
    reports = []
    for nm, j1, j2 in names:
        al = a_req if nm in required else alpha
        reports.append(ks_two_sample(SampleSet(f"flow {nm}", A1[:, j1]),
                                     SampleSet(f"walk {nm}", A2[:, j2]), al, name=nm, params=params))
    req = list(required)
    if unreversed:
        for nm, j2 in (("duration_unreversed", 5), ("half_position_unreversed", 6)):
            reports.append(ks_two_sample(SampleSet(f"flow {nm}", A1[:, 1 if 'duration' in nm else 2]),
                                         SampleSet(f"walk {nm}", A2[:, j2]), a_req, name=nm,
                                         params=params))
            req.append(nm)
    checks = {
        "discard_rate_ok": bool(max(counts["side1_discarded"], counts["side2_discarded"])
                                < MAX_DISCARD * replicas),
    }
    return Experiment("inversion", reports, params, counts,
                      samples={"flow": A1, "walk": A2}, required=tuple(req), extra_checks=checks)


# ---------------------------------------------------------------------------
# lattice convergence

def _conv_continuum(i, profile, x0, eps, t_fixed, horizon, du, seed):
    tr = build_diffusion(profile, x0, horizon, du, _rng(seed, 31, i), eps=eps, t_query=[t_fixed])
    if tr.boundary_hit:
        stop = tr.T_total
        x_stop = tr.x_end
    else:
        stop = tr.T_eps
        x_stop = tr.x_eps
    x_t = float(tr.query_x[0]) if t_fixed < stop else x_stop
    return (x_t, stop, float(tr.boundary_hit), float(tr.converged))


def _conv_lattice(i, level, profile, x0, eps, t_fixed, seed):
    log = run_lattice_selfrep(level, profile, eps, _rng(seed, 40 + level, i),
                              start=_start_index(level, profile, x0))
    te = log.exhaustion_time(eps, "last")
    tb = log.t_boundary
    stop = min(te, tb)
    x_t = float(log.position_at(min(t_fixed, stop)))
    return (x_t, stop, float(tb < te))


def _start_index(level, profile, x0):
    lo, _ = profile.interval
    h = 2.0 ** -level
    return int(round(x0 / h)) - (math.floor(lo / h) + 1)


def convergence_study(profile=None, x0=0.0, eps=0.1, levels=(3, 5, 7), replicas=4000, seed=0,
                      t_fixed=0.2, alpha=0.01, horizon=20.0, du=DEFAULT_DU, threads=None):
    """Lattice walks at increasing levels against the flow construction."""
    if profile is None:
        profile = OccupationProfile.constant(1.0, -4.0, 4.0, 0.01)
    if not eps > 0:
        raise ValueError("eps must be positive")
    cont = np.array(map_replicas(functools.partial(
        _conv_continuum, profile=profile, x0=x0, eps=eps, t_fixed=t_fixed, horizon=horizon,
        du=du, seed=seed), replicas, threads))
    params = {"x0": x0, "eps": eps, "levels": list(levels), "replicas": replicas, "seed": seed,
              "t_fixed": t_fixed, "horizon": horizon, "du": du}
    reports = []
    disc = {}
    for n in levels:
        disc[n] = np.array(map_replicas(functools.partial(
            _conv_lattice, level=n, profile=profile, x0=x0, eps=eps, t_fixed=t_fixed, seed=seed),
            replicas, threads))
        reports.append(ks_two_sample(SampleSet(f"lattice n={n}", disc[n][:, 0]),
                                     SampleSet("flow", cont[:, 0]), alpha,
                                     name=f"position n={n}", params=params))
        reports.append(ks_two_sample(SampleSet(f"lattice n={n}", disc[n][:, 1]),
                                     SampleSet("flow", cont[:, 1]), alpha,
                                     name=f"stop_time n={n}", params=params))
    for n0, n1 in zip(levels[:-1], levels[1:]):
        reports.append(ks_two_sample(SampleSet(f"n={n0}", disc[n0][:, 1]),
                                     SampleSet(f"n={n1}", disc[n1][:, 1]), alpha,
                                     name=f"stop_time n={n0} vs n={n1}", params=params))
    pos = [r.statistic for r in reports if r.name.startswith("position")]
    hits = [float(disc[n][:, 2].mean()) for n in levels]
    counts = {f"boundary_n={n}": int(disc[n][:, 2].sum()) for n in levels}
    counts["boundary_flow"] = int(cont[:, 2].sum())
    counts["flow_not_converged"] = int((cont[:, 3] == 0).sum())
    checks = {
        "position_ks_nonincreasing": bool(all(b <= a for a, b in zip(pos[:-1], pos[1:]))),
        "boundary_nonincreasing": bool(all(b <= a for a, b in zip(hits[:-1], hits[1:]))),
    }
    final = f"position n={levels[-1]}"
    return Experiment("convergence", reports, params, counts,
                      samples={"flow": cont, **{f"n={n}": disc[n] for n in levels}},
                      required=(final,), extra_checks=checks)


# ---------------------------------------------------------------------------
# cross representation: reversed walk mapped onto another profile

def _cross_walk_side(i, a, level, target_scale, t_fixed, seed):
    h = 2.0 ** -level
    rho = 0.5 * a * a
    s = stopped_walk_with_field(level, rho, _rng(seed, 51, i), _rng(seed, 52, i))
    if not s.ok:
        return (False, np.nan, np.nan)
    root = np.sqrt(s.phi0 ** 2 + 2.0 * s.ell)
    i0 = -s.site_min
    # scale of the squared a-field along the lattice, zero at the origin
    inc = h / (root[:-1] * root[1:])
    S = np.concatenate(([0.0], np.cumsum(inc)))
    S -= S[i0]
    lo, hi = target_scale.y_range
    inside = (S > lo) & (S < hi)
    xt = np.full(S.shape, np.nan)
    xt[inside] = target_scale.inverse(S[inside])
    # time-change rate per site; NaN outside the target range discards the replica
    rate = np.full(S.shape, np.nan)
    rate[inside] = target_scale.profile(xt[inside]) ** 2 / root[inside] ** 4
    # the reversed clock reaches t_fixed where the forward one reaches total - t_fixed
    total, _ = _replay_weighted(_rng(seed, 51, i), level, rho, 10**8, s.sigma, rate,
                                s.site_min, np.inf)
    if not np.isfinite(total):
        return (False, np.nan, np.nan)
    _, site = _replay_weighted(_rng(seed, 51, i), level, rho, 10**8, s.sigma, rate,
                               s.site_min, total - t_fixed)
    return (True, float(xt[site - s.site_min]), float(total))


def _cross_flow_side(i, target, t_fixed, horizon, du, seed):
    tr = build_diffusion(target, 0.0, horizon, du, _rng(seed, 53, i), t_query=[t_fixed])
    return (tr.converged and not tr.boundary_hit, float(tr.query_x[0]), tr.T_total)


def verify_cross_representation(a=1.0, target=None, level=6, replicas=5000, seed=0,
                                t_fixed=0.1, alpha=0.01, horizon=20.0, du=DEFAULT_DU,
                                threads=None):
    """Reversed stopped walk pushed onto ``target`` against the flow built on ``target``."""
    if target is None:
        target = OccupationProfile.constant(1.0, -40.0, 40.0, 0.01)
    tscale = scale_from_profile(target, 0.0)
    w = np.array(map_replicas(functools.partial(_cross_walk_side, a=a, level=level,
                                                target_scale=tscale, t_fixed=t_fixed, seed=seed),
                              replicas, threads), dtype=float)
    f = np.array(map_replicas(functools.partial(_cross_flow_side, target=target, t_fixed=t_fixed,
                                                horizon=horizon, du=du, seed=seed),
                              replicas, threads), dtype=float)
    okw, okf = w[:, 0] > 0, f[:, 0] > 0
    params = {"a": a, "level": level, "replicas": replicas, "seed": seed, "t_fixed": t_fixed}
    rep = ks_two_sample(SampleSet("walk", w[okw, 1]), SampleSet("flow", f[okf, 1]), alpha,
                        name="position", params=params)
    # informational: the lattice clock near the ends of the range converges slowly in level
    rep2 = ks_two_sample(SampleSet("walk", w[okw, 2]), SampleSet("flow", f[okf, 2]), alpha,
                         name="duration", params=params)
    counts = {"walk_discarded": int((~okw).sum()), "flow_discarded": int((~okf).sum())}
    checks = {"discard_rate_ok": max(counts.values()) < MAX_DISCARD * replicas}
    return Experiment("cross_representation", [rep, rep2], params, counts,
                      samples={"walk": w, "flow": f}, required=("position",),
                      extra_checks=checks)


# ---------------------------------------------------------------------------
# forward/reversed triples on a few sites

def _triple_replica(i, x, a, seed):
    z = int(np.flatnonzero(x == 0.0)[0])
    dx = np.diff(x)

    def field(val, rng):
        out = np.empty(x.size)
        out[z] = val
        sd = np.sqrt(2.0 * dx)
        for k in range(z + 1, x.size):
            out[k] = out[k - 1] + sd[k - 1] * rng.standard_normal()
        for k in range(z - 1, -1, -1):
            out[k] = out[k + 1] + sd[k] * rng.standard_normal()
        return out

    rf = _rng(seed, 61, i)
    phi0 = field(0.0, rf)
    op0 = (rf.random(x.size - 1) < edges_from_field(x, phi0)).astype(np.int8)
    fwd = run_forward_triple(x, phi0 ** 2, op0, _rng(seed, 62, i), stop_lam_at_origin=a * a)
    rr = _rng(seed, 63, i)
    phia = field(a, rr)
    rev, rev_open0 = run_reversed_triple(x, phia, rr)
    return (fwd.q_end, rev.q_end, fwd.final_lam, rev.final_lam, phi0 ** 2, phia ** 2,
            rev.final_site == z and not rev.final_open[max(z - 1, 0)]
            and not rev.final_open[min(z, x.size - 2)],
            np.asarray(fwd.final_open, dtype=float), np.asarray(rev_open0, dtype=float))


def verify_reversal(x=(-1.0, -0.5, 0.0, 0.5, 1.0), a=1.0, replicas=10_000, seed=0, alpha=0.01,
                    threads=None):
    """Forward triple run to the inverse local time against the reversed triple."""
    x = np.asarray(x, dtype=float)
    out = map_replicas(functools.partial(_triple_replica, x=x, a=a, seed=seed), replicas, threads)
    fq = np.array([o[0] for o in out])
    rq = np.array([o[1] for o in out])
    f_end = np.array([o[2] for o in out])
    r_end = np.array([o[3] for o in out])
    f_start = np.array([o[4] for o in out])
    r_start = np.array([o[5] for o in out])
    terminal_ok = all(o[6] for o in out)
    z = int(np.flatnonzero(x == 0.0)[0])
    others = [k for k in range(x.size) if k != z]
    n_tests = 1 + 2 * len(others)
    al = alpha / n_tests
    params = {"sites": x.tolist(), "a": a, "replicas": replicas, "seed": seed}
    reports = [ks_two_sample(SampleSet("forward", fq), SampleSet("reversed", rq), al,
                             name="duration", params=params)]
    for k in others:
        reports.append(ks_two_sample(SampleSet("forward start", f_start[:, k]),
                                     SampleSet("reversed end", r_end[:, k]), al,
                                     name=f"profile x={x[k]} (forward start vs reversed end)",
                                     params=params))
        reports.append(ks_two_sample(SampleSet("forward end", f_end[:, k]),
                                     SampleSet("reversed start", r_start[:, k]), al,
                                     name=f"profile x={x[k]} (forward end vs reversed start)",
                                     params=params))
    required = tuple(r.name for r in reports)
    f_open = np.array([o[7] for o in out])
    r_open = np.array([o[8] for o in out])
    for e in range(x.size - 1):
        reports.append(ks_two_sample(SampleSet("forward end", f_open[:, e]),
                                     SampleSet("reversed start", r_open[:, e]), alpha / (x.size - 1),
                                     name=f"edge ({x[e]}, {x[e + 1]}) open", params=params))
    return Experiment("reversal", reports, params, required=required,
                      samples={"duration": np.column_stack((fq, rq))},
                      extra_checks={"reversed_terminal_state": bool(terminal_ok)})


# ---------------------------------------------------------------------------
# martingale diagnostics

def _mart_replica(i, level, profile, eps, u_grid, seed):
    log = run_lattice_selfrep(level, profile, eps, _rng(seed, 71, i), rule="first",
                              stop_on_boundary=True, start=_start_index(level, profile, 0.0))
    ms = martingale_diagnostics(log, level)
    bound = 2.0 ** -level / min(float(np.min(log.profile.lam)), eps)
    jmax = float(np.max(np.abs(ms.jumps))) if ms.jumps.size else 0.0
    return ms.Z(u_grid), ms.U_end, jmax, bound


def martingale_study(level=6, replicas=1000, seed=0, eps=0.1, profile=None,
                     u_grid=(0.02, 0.04, 0.06, 0.08, 0.1), u_var=0.05, rel_tol=0.05,
                     threads=None):
    """Mean and variance of the time-changed moving-scale martingale.

    Increment means are checked on every interval of ``u_grid``; the variance
    check is made at the single clock value ``u_var`` (the other grid points
    are reported for information).
    """
    if profile is None:
        profile = OccupationProfile.constant(1.0, -4.0, 4.0, 0.01)
    u = np.unique(np.append(np.asarray(u_grid, dtype=float), u_var))
    out = map_replicas(functools.partial(_mart_replica, level=level, profile=profile, eps=eps,
                                         u_grid=u, seed=seed), replicas, threads)
    Z = np.array([o[0] for o in out])
    U_end = np.array([o[1] for o in out])
    params = {"level": level, "replicas": replicas, "seed": seed, "eps": eps,
              "u_grid": u.tolist()}
    reports = []
    prev = np.zeros(replicas)
    for j, uj in enumerate(u):
        reports.append(mean_report(Z[:, j] - prev, 0.0, f"increment mean to u={uj:g}"))
        prev = Z[:, j]
    var_reports = []
    for j, uj in enumerate(u):
        v = float(np.var(Z[:, j], ddof=1))
        var_reports.append(StatReport(f"variance u={uj:g}", abs(v / uj - 1.0), rel_tol,
                                      float("nan"), (replicas,), params,
                                      {"variance": v, "u": float(uj),
                                       "rel_se": math.sqrt(2.0 / (replicas - 1)),
                                       "stopped_before_u": float(np.mean(U_end < uj)),
                                       "mean_u_min_U": float(np.mean(np.minimum(uj, U_end)))}))
    jump_ok = all(o[2] <= o[3] * (1 + 1e-12) for o in out)
    required = tuple(r.name for r in reports) + (f"variance u={u_var:g}",)
    return Experiment("martingale", reports + var_reports, params,
                      counts={"stopped_before_last_u": int(np.sum(U_end < u[-1]))},
                      samples={"Z": Z, "U_end": U_end}, required=required,
                      extra_checks={"jump_bound": jump_ok})


# ---------------------------------------------------------------------------
# drifted Brownian race and transfer

def _race_replica(i, s_up, s_down, du, seed):
    return race(s_up, s_down, _rng(seed, 81, i), du=du)[0]


def race_study(s_up=0.5, s_down=-np.inf, replicas=10_000, seed=0, du=1e-2, threads=None):
    """Frequency with which ``B_u - u`` ever reaches ``s_up`` against ``exp(-2 s_up)``."""
    out = map_replicas(functools.partial(_race_replica, s_up=s_up, s_down=s_down, du=du, seed=seed),
                       replicas, threads)
    hits = sum(o == "exit_right" for o in out)
    counts = {k: sum(o == k for o in out) for k in ("exit_right", "exit_left", "exhausted", "undecided")}
    params = {"s_up": s_up, "s_down": s_down, "replicas": replicas, "seed": seed, "du": du}
    rep = proportion_report(hits, replicas, math.exp(-2 * s_up), "hit frequency", params=params)
    return Experiment("race", [rep], params, counts)


def _transfer_replica(i, source, target, t_fixed, horizon, du, seed):
    tr = build_diffusion(source, 0.0, horizon, du, _rng(seed, 91, i))
    moved = transfer_path(tr, target, 0.0)
    x_tr = float(_at(moved.t, moved.x, t_fixed))
    direct = build_diffusion(target, 0.0, horizon, du, _rng(seed, 92, i), t_query=[t_fixed])
    return x_tr, float(direct.query_x[0]), moved.T_total, direct.T_total


def _at(t, x, s):
    return x[min(max(int(np.searchsorted(t, s, side="right")) - 1, 0), x.size - 1)]


def transfer_study(source=None, target=None, replicas=1000, seed=0, t_fixed=0.1, horizon=20.0,
                   du=DEFAULT_DU, alpha=0.01, threads=None):
    """Trajectories transferred from ``source`` against direct builds on ``target``."""
    if source is None:
        source = OccupationProfile.constant(1.0, -30.0, 30.0, 0.01)
    if target is None:
        target = OccupationProfile.from_function(lambda x: 1.0 + 0.5 * np.sin(3.0 * x),
                                                 -30.0, 30.0, 0.01)
    out = np.array(map_replicas(functools.partial(_transfer_replica, source=source, target=target,
                                                  t_fixed=t_fixed, horizon=horizon, du=du, seed=seed),
                                replicas, threads))
    params = {"replicas": replicas, "seed": seed, "t_fixed": t_fixed, "du": du}
    reps = [ks_two_sample(SampleSet("transferred", out[:, 0]), SampleSet("direct", out[:, 1]),
                          alpha / 2, name="position", params=params),
            ks_two_sample(SampleSet("transferred", out[:, 2]), SampleSet("direct", out[:, 3]),
                          alpha / 2, name="duration", params=params)]
    return Experiment("transfer", reps, params, samples={"out": out}, required=("position",))
