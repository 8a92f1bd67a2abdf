"""Exact event-driven simulation of self-repelling jump processes on finite lines.

Sites ``x_0 < ... < x_{m-1}`` carry a resource ``lam``.  Writing ``v = sqrt(lam)``
at the occupied site and ``K = sqrt(lam_nb) / |dx|`` for a neighbour, every rate
below has a closed-form cumulative hazard in ``v``:

=============================  ==========================  ==============================
process                        rate (per unit q)           cumulative hazard from v0 to v
=============================  ==========================  ==============================
drain jump (lam falls, dq=-v dv)  sqrt(lam_nb/lam)/(2|dx|)   K (v0 - v) / 2
drain clock / closure          K/(v (e^{Kv} - 1))          ln(1-e^{-K v0}) - ln(1-e^{-K v})
rise opening (lam grows)       sqrt(lam_nb/lam)/(2|dx|)   K (v - v0) / 2
=============================  ==========================  ==============================

Event times are obtained by inverting these against fresh ``Exp(1)`` draws, so
there is no time discretisation anywhere.  A summed clock over two neighbours is
inverted with safeguarded Newton iterations.
"""
import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._accel import jit
from .rng import make_rng

JUMP, OPEN, CLOSE, CLOCK, EXHAUST, EPS_STOP, BOUNDARY, HORIZON, TARGET = range(9)
KIND_NAMES = ("jump", "edge_open", "edge_close", "clock_fire", "exhaust",
              "eps_stop", "boundary", "horizon", "target")
TERMINAL = (CLOCK, EXHAUST, EPS_STOP, BOUNDARY, HORIZON, TARGET)

LAMBDA_MIN = 1e-12
DEFAULT_MAX_EVENTS = 2_000_000

CLOCK_OFF, CLOCK_STOP, CLOCK_CLOSE = 0, 1, 2


@dataclass(frozen=True)
class SiteProfile:
    """Ordered sites (coordinates) and the resource carried by each."""
    x: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=float)
        lam = np.ascontiguousarray(self.lam, dtype=float)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "lam", lam)
        if x.ndim != 1 or x.shape != lam.shape or x.size == 0:
            raise ValueError("sites and values must be matching non-empty vectors")
        if np.any(np.diff(x) <= 0):
            raise ValueError("sites must be strictly increasing")
        if not np.all(np.isfinite(lam)) or np.any(lam < 0):
            raise ValueError("profile values must be finite and >= 0")

    @property
    def origin(self):
        """Index of the site at 0."""
        hit = np.flatnonzero(self.x == 0.0)
        if hit.size != 1:
            raise ValueError("sites must contain 0")
        return int(hit[0])


@dataclass(frozen=True)
class JumpEventLog:
    """Events of one run.

    ``site[k]`` is the occupied site right after event ``k`` and ``lam_after[k]``
    its resource at that moment; ``lam_before[k]`` is the resource of the site
    occupied just before the event.  ``edge[k]`` is the edge (index of its left
    site) that opened/closed, or for a jump across a closed edge the edge it
    forced open, else -1.  Time is ``q * time_scale``.
    """
    profile: SiteProfile
    start: int
    q: np.ndarray
    kind: np.ndarray
    site: np.ndarray
    edge: np.ndarray
    lam_before: np.ndarray
    lam_after: np.ndarray
    final_lam: np.ndarray
    final_open: np.ndarray
    reason: int
    q_end: float
    q_boundary: float
    time_scale: float = 1.0
    warnings: tuple = ()
    seed: object = None

    @property
    def n_events(self):
        return self.q.size

    @property
    def t(self):
        return self.q * self.time_scale

    @property
    def t_end(self):
        return self.q_end * self.time_scale

    @property
    def t_boundary(self):
        return self.q_boundary * self.time_scale

    @property
    def reason_name(self):
        return KIND_NAMES[self.reason]

    @property
    def final_site(self):
        return int(self.site[-1]) if self.q.size else self.start

    def holdings(self):
        """``(q_start, q_stop, site, lam_start, lam_stop)`` for each stay."""
        q0 = np.concatenate(([0.0], self.q))
        s = np.concatenate(([self.start], self.site))
        l0 = np.concatenate(([self.profile.lam[self.start]], self.lam_after))
        q1 = np.concatenate((self.q, [self.q_end]))
        l1 = np.concatenate((self.lam_before, [self.final_lam[s[-1]]]))
        # the terminal event (if any) closes the last real stay
        if self.q.size and self.kind[-1] in TERMINAL:
            q0, s, l0, q1, l1 = q0[:-1], s[:-1], l0[:-1], q1[:-1], l1[:-1]
        return q0, q1, s, l0, l1

    def position_at(self, t):
        q = np.asarray(t, dtype=float) / self.time_scale
        sites = np.concatenate(([self.start], self.site))
        idx = np.searchsorted(self.q, q, side="right")
        return self.profile.x[sites[idx]]

    def exhaustion_time(self, eps, rule="last"):
        """Time at which the resource at the particle crosses ``eps``.

        ``rule="last"``: the last time it is above ``eps``;
        ``rule="first"``: the first time it is at or below ``eps``.
        """
        q0, q1, _, l0, l1 = self.holdings()
        if rule == "last":
            above = l0 > eps
            if not above.any():
                return 0.0
            k = np.flatnonzero(above)[-1]
            q = q1[k] if l1[k] > eps else q0[k] + 0.5 * (l0[k] - eps)
            return float(q * self.time_scale)
        if rule == "first":
            below = l1 <= eps
            if not below.any():
                return float("nan")
            k = np.flatnonzero(below)[0]
            q = q0[k] if l0[k] <= eps else q0[k] + 0.5 * (l0[k] - eps)
            return float(q * self.time_scale)
        raise ValueError("rule must be 'last' or 'first'")

    def occupation(self):
        """Time spent at each site."""
        q0, q1, s, _, _ = self.holdings()
        return np.bincount(s, weights=(q1 - q0), minlength=self.profile.x.size) * self.time_scale

    def summary(self):
        return {"reason": self.reason_name, "q_end": self.q_end, "t_end": self.t_end,
                "t_boundary": self.t_boundary if math.isfinite(self.q_boundary) else None,
                "n_events": int(self.n_events), "final_site": float(self.profile.x[self.final_site]),
                "warnings": list(self.warnings), "seed": self.seed}

    def to_csv(self, fh, with_lambda=False):
        fh.write("q,kind,site,edge" + (",lam_before,lam_after" if with_lambda else "") + "\n")
        rows = zip(self.q.tolist(), self.kind.tolist(), self.site.tolist(), self.edge.tolist(),
                   self.lam_before.tolist(), self.lam_after.tolist())
        for q, kind, site, edge, lb, la in rows:
            row = f"{q!r},{KIND_NAMES[kind]},{site},{edge}"
            if with_lambda:
                row += f",{lb!r},{la!r}"
            fh.write(row + "\n")

    def to_json(self):
        return json.dumps(self.summary(), sort_keys=True)


# ---------------------------------------------------------------------------
# hazard algebra (also used by the tests as the reference closed forms)

@jit
def log1mexp(x):
    """``ln(1 - e^{-x})`` for ``x > 0``."""
    if x > 0.6931471805599453:
        return math.log1p(-math.exp(-x))
    return math.log(-math.expm1(-x))


@jit
def drain_jump_target(v0, K, E):
    """Resource root ``v`` at which a drain-phase jump with budget ``E`` fires (<= 0: never)."""
    if K <= 0.0:
        return -1.0
    return v0 - 2.0 * E / K


@jit
def clock_hazard(v0, v, K):
    return log1mexp(K * v0) - log1mexp(K * v)


@jit
def clock_target_single(v0, K, R):
    """Invert ``clock_hazard(v0, v, K) = R`` for ``v``."""
    return -math.log1p(-(-math.expm1(-K * v0)) * math.exp(-R)) / K


@jit
def clock_target_pair(v0, K1, K2, R, vmin):
    """Invert the summed clock of two neighbours; returns -1 below ``vmin``."""
    target = log1mexp(K1 * v0) + log1mexp(K2 * v0) - R
    if log1mexp(K1 * vmin) + log1mexp(K2 * vmin) >= target:
        return -1.0
    lo = vmin
    hi = v0
    # start from the single-neighbour bound of the dominant term
    v = 0.5 * (lo + hi)
    for _ in range(200):
        f = log1mexp(K1 * v) + log1mexp(K2 * v) - target
        if f > 0.0:
            hi = v
        else:
            lo = v
        d = K1 / math.expm1(K1 * v) + K2 / math.expm1(K2 * v)
        vn = v - f / d
        if not (lo < vn < hi):
            vn = 0.5 * (lo + hi)
        if abs(vn - v) <= 1e-15 * v or hi - lo <= 1e-15 * hi:
            v = vn
            break
        v = vn
    return v


@jit
def rise_open_target(v0, K, E):
    if K <= 0.0:
        return np.inf
    return v0 + 2.0 * E / K


# ---------------------------------------------------------------------------
# drain kernel: resource falls at the particle (self-repelling, lattice, reversed)

@jit
def _drain_kernel(rng, xs, lam_in, open_in, start, zero, clock_mode, eps_stop,
                  stop_on_boundary, max_events):
    m = xs.shape[0]
    lam = lam_in.copy()
    op = open_in.copy()
    cap = max_events
    ev_q = np.empty(cap)
    ev_kind = np.empty(cap, dtype=np.int8)
    ev_site = np.empty(cap, dtype=np.int64)
    ev_edge = np.empty(cap, dtype=np.int64)
    ev_lb = np.empty(cap)
    ev_la = np.empty(cap)
    n = 0
    q = 0.0
    i = start
    vmin = math.sqrt(1e-12)
    q_boundary = np.inf
    n_guard = 0
    if m > 1 and (i == 0 or i == m - 1):
        q_boundary = 0.0
    R = 0.0
    if clock_mode > 0:
        R = rng.standard_exponential()
    reason = 7
    while True:
        if n >= cap - 2:
            reason = 7
            break
        if stop_on_boundary and m > 1 and (i == 0 or i == m - 1):
            ev_q[n] = q
            ev_kind[n] = 6
            ev_site[n] = i
            ev_edge[n] = -1
            ev_lb[n] = lam[i]
            ev_la[n] = lam[i]
            n += 1
            reason = 6
            break
        v0 = math.sqrt(lam[i])
        if eps_stop > 0.0 and lam[i] <= eps_stop:
            ev_q[n] = q
            ev_kind[n] = 5
            ev_site[n] = i
            ev_edge[n] = -1
            ev_lb[n] = lam[i]
            ev_la[n] = lam[i]
            n += 1
            reason = 5
            break
        # usable neighbours
        nL = i > 0 and op[i - 1] == 1
        nR = i < m - 1 and op[i] == 1
        KL = 0.0
        KR = 0.0
        if nL:
            KL = math.sqrt(lam[i - 1]) / (xs[i] - xs[i - 1])
        if nR:
            KR = math.sqrt(lam[i + 1]) / (xs[i + 1] - xs[i])
        if clock_mode == 1 and not nL and not nR:
            # nothing to jump to: the clock is declared to fire at once
            ev_q[n] = q
            ev_kind[n] = 3
            ev_site[n] = i
            ev_edge[n] = -1
            ev_lb[n] = lam[i]
            ev_la[n] = lam[i]
            n += 1
            reason = 3
            break
        vL = -1.0
        vR = -1.0
        if nL:
            vL = drain_jump_target(v0, KL, rng.standard_exponential())
        if nR:
            vR = drain_jump_target(v0, KR, rng.standard_exponential())
        vC = -1.0
        clock_on = clock_mode > 0 and ((nL and KL > 0.0) or (nR and KR > 0.0))
        guard = False
        if clock_on:
            if nL and KL > 0.0 and nR and KR > 0.0:
                vC = clock_target_pair(v0, KL, KR, R, vmin)
            elif nL and KL > 0.0:
                vC = clock_target_single(v0, KL, R)
            else:
                vC = clock_target_single(v0, KR, R)
            if vC < vmin:
                vC = -1.0
                guard = True
        vE = -1.0
        if eps_stop > 0.0:
            vE = math.sqrt(eps_stop)
        # earliest event = largest v; ties go jump > clock/closure > eps stop
        best = 0.0
        kind = 4
        if vE > best:
            best = vE
            kind = 5
        if vC > best or (vC == best and vC > 0.0):
            best = vC
            kind = 3
        if vR > best or (vR == best and vR > 0.0):
            best = vR
            kind = 0
        if vL > best or (vL == best and vL > 0.0 and kind != 0):
            best = vL
            kind = 10
        if kind == 4 and guard:
            best = vmin
            n_guard += 1
        q += 0.5 * (v0 * v0 - best * best)
        lb = best * best
        if kind == 4 and not guard:
            lb = 0.0
        if clock_on and (kind == 0 or kind == 10 or kind == 3):
            h = 0.0
            if nL and KL > 0.0:
                h += clock_hazard(v0, best, KL)
            if nR and KR > 0.0:
                h += clock_hazard(v0, best, KR)
            R -= h
            if R < 0.0:
                R = 0.0
        lam[i] = lb
        if kind == 0 or kind == 10:
            j = i + 1 if kind == 0 else i - 1
            ev_q[n] = q
            ev_kind[n] = 0
            ev_site[n] = j
            ev_edge[n] = -1
            ev_lb[n] = lb
            ev_la[n] = lam[j]
            n += 1
            i = j
            if m > 1 and (i == 0 or i == m - 1) and q < q_boundary:
                q_boundary = q
            continue
        if kind == 3 and clock_mode == 2:
            # close one adjacent edge, chosen by the instantaneous rates
            rl = 0.0
            rr = 0.0
            if nL and KL > 0.0:
                rl = KL / math.expm1(KL * best)
            if nR and KR > 0.0:
                rr = KR / math.expm1(KR * best)
            if rng.random() * (rl + rr) < rl:
                e = i - 1
                other = i - 1
            else:
                e = i
                other = i + 1
            op[e] = 0
            # stay on the side that still reaches the origin
            if (zero <= e and i > e) or (zero > e and i <= e):
                i = other
            ev_q[n] = q
            ev_kind[n] = 2
            ev_site[n] = i
            ev_edge[n] = e
            ev_lb[n] = lb
            ev_la[n] = lam[i]
            n += 1
            R = rng.standard_exponential()
            continue
        ev_q[n] = q
        ev_kind[n] = kind
        ev_site[n] = i
        ev_edge[n] = -1
        ev_lb[n] = lb
        ev_la[n] = lb
        n += 1
        reason = kind
        break
    return (ev_q[:n].copy(), ev_kind[:n].copy(), ev_site[:n].copy(), ev_edge[:n].copy(),
            ev_lb[:n].copy(), ev_la[:n].copy(), lam, op, reason, q, q_boundary, n_guard)


def _make_log(profile, start, out, time_scale, seed):
    evq, evk, evs, eve, elb, ela, lam, op, reason, q, qb, n_guard = out
    warns = []
    if n_guard:
        warns.append(f"resource floor {LAMBDA_MIN:g} reached {n_guard} time(s)")
    if reason == HORIZON:
        warns.append("event cap reached")
    return JumpEventLog(profile, int(start), evq, evk.astype(np.int64), evs, eve, elb, ela, lam,
                        op.astype(bool), int(reason), float(q), float(qb), float(time_scale),
                        tuple(warns), seed if not isinstance(seed, np.random.Generator) else None)


def _check_positive(profile):
    if np.any(profile.lam <= 0):
        raise ValueError("profile values must be positive")


def run_selfrep_jump(profile, seed, start=None, max_events=DEFAULT_MAX_EVENTS):
    """Self-repelling jump process stopped by its exponential clock.

    Starts at the site at 0 unless ``start`` (an index) is given.  A single
    site terminates at once with zero duration.
    """
    _check_positive(profile)
    s = profile.origin if start is None else int(start)
    op = np.ones(max(profile.x.size - 1, 0), dtype=np.int8)
    out = _drain_kernel(make_rng(seed), profile.x, profile.lam, op, s, s, CLOCK_STOP, 0.0,
                        False, int(max_events))
    return _make_log(profile, s, out, 1.0, seed)


def lattice_profile(level, profile):
    """Sample an occupation profile on ``2^-level Z`` strictly inside its interval."""
    lo, hi = profile.interval
    h = 2.0 ** -level
    k_lo = math.floor(lo / h) + 1
    k_hi = math.ceil(hi / h) - 1
    x = h * np.arange(k_lo, k_hi + 1)
    return SiteProfile(x, profile(x))


def run_lattice_selfrep(level, profile, eps, seed, start=None, rule="last",
                        stop_on_boundary=False, max_events=DEFAULT_MAX_EVENTS):
    """Lattice self-repelling walk on ``2^-level Z``, accelerated by ``2^level``.

    With ``rule="first"`` the run stops when the resource at the particle first
    drops to ``eps``.  With ``rule="last"`` it runs to exhaustion so that the
    last time the resource exceeded ``eps`` can be read off the log.  The first
    time an extreme site is reached is recorded either way (``t_boundary``),
    and ``stop_on_boundary`` also stops there.

    ``profile`` is a :class:`SiteProfile` on the lattice or an object with an
    ``interval`` and a vectorised ``__call__`` (an occupation profile).
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if rule not in ("last", "first"):
        raise ValueError("rule must be 'last' or 'first'")
    sp = profile if isinstance(profile, SiteProfile) else lattice_profile(level, profile)
    _check_positive(sp)
    s = sp.origin if start is None else int(start)
    op = np.ones(sp.x.size - 1, dtype=np.int8)
    out = _drain_kernel(make_rng(seed), sp.x, sp.lam, op, s, s, CLOCK_OFF,
                        float(eps) if rule == "first" else 0.0, bool(stop_on_boundary),
                        int(max_events))
    return _make_log(sp, s, out, 2.0 ** -level, seed)


def edges_from_field(x, phi):
    """Open/closed state of each edge for a free field known at the sites.

    An edge is open iff the field has no zero on it; given the end values, a
    same-sign pair is zero-free with the Brownian-bridge probability
    ``1 - exp(-phi1 phi2 / |dx|)`` (field = sqrt(2) x Brownian motion).
    Returns the probabilities (use with a uniform draw to sample).
    """
    x = np.asarray(x, dtype=float)
    phi = np.asarray(phi, dtype=float)
    prod = phi[:-1] * phi[1:]
    dx = np.diff(x)
    return np.where(prod > 0, -np.expm1(-prod / dx), 0.0)


def run_reversed_triple(profile_x, phi_a, seed, max_events=DEFAULT_MAX_EVENTS, open_edges=None):
    """Reversed triple: drain with closures inside the open cluster of the origin.

    ``phi_a`` is the free field with value ``a`` at 0 restricted to the sites;
    the resource is ``phi_a**2``.  Initial edges are sampled from the field
    unless ``open_edges`` is given.  The run ends when the particle, alone at
    the origin, has drained it.
    """
    x = np.asarray(profile_x, dtype=float)
    phi = np.asarray(phi_a, dtype=float)
    prof = SiteProfile(x, phi ** 2)
    z = prof.origin
    if not phi[z] > 0:
        raise ValueError("field must be positive at the origin")
    rng = make_rng(seed)
    if open_edges is None:
        p = edges_from_field(x, phi)
        op = (rng.random(p.size) < p).astype(np.int8)
    else:
        op = np.asarray(open_edges, dtype=np.int8)
    out = _drain_kernel(rng, x, prof.lam, op, z, z, CLOCK_CLOSE, 0.0, False, int(max_events))
    log = _make_log(prof, z, out, 1.0, seed)
    return log, op.astype(bool)


def open_cluster(open_edges, site):
    """Indices connected to ``site`` through open edges."""
    lo = site
    while lo > 0 and open_edges[lo - 1]:
        lo -= 1
    hi = site
    while hi < len(open_edges) and open_edges[hi]:
        hi += 1
    return lo, hi


# ---------------------------------------------------------------------------
# forward triple: resource grows at the particle, homogeneous jumps

@jit
def _rise_kernel(rng, xs, lam_in, open_in, start, target_site, target_lam, q_max, max_events):
    m = xs.shape[0]
    lam = lam_in.copy()
    op = open_in.copy()
    cap = max_events
    ev_q = np.empty(cap)
    ev_kind = np.empty(cap, dtype=np.int8)
    ev_site = np.empty(cap, dtype=np.int64)
    ev_edge = np.empty(cap, dtype=np.int64)
    ev_lb = np.empty(cap)
    ev_la = np.empty(cap)
    n = 0
    q = 0.0
    i = start
    reason = 7
    while True:
        if n >= cap - 2:
            reason = 7
            break
        rL = 0.0
        rR = 0.0
        if i > 0:
            rL = 0.5 / (xs[i] - xs[i - 1])
        if i < m - 1:
            rR = 0.5 / (xs[i + 1] - xs[i])
        v0 = math.sqrt(lam[i])
        dq_jump = np.inf
        if rL + rR > 0.0:
            dq_jump = rng.standard_exponential() / (rL + rR)
        dq_oL = np.inf
        dq_oR = np.inf
        if i > 0 and op[i - 1] == 0:
            K = math.sqrt(lam[i - 1]) / (xs[i] - xs[i - 1])
            v = rise_open_target(v0, K, rng.standard_exponential())
            dq_oL = 0.5 * (v * v - v0 * v0)
        if i < m - 1 and op[i] == 0:
            K = math.sqrt(lam[i + 1]) / (xs[i + 1] - xs[i])
            v = rise_open_target(v0, K, rng.standard_exponential())
            dq_oR = 0.5 * (v * v - v0 * v0)
        dq_stop = np.inf
        if i == target_site and target_lam > lam[i]:
            dq_stop = 0.5 * (target_lam - lam[i])
        elif i == target_site:
            dq_stop = 0.0
        dq_h = q_max - q
        best = min(dq_jump, dq_oL, dq_oR, dq_stop, dq_h)
        if best == dq_stop or best == dq_h:
            kind = 8 if best == dq_stop else 7
            q += best
            lam[i] = target_lam if kind == 8 else lam[i] + 2.0 * best
            ev_q[n] = q
            ev_kind[n] = kind
            ev_site[n] = i
            ev_edge[n] = -1
            ev_lb[n] = lam[i]
            ev_la[n] = lam[i]
            n += 1
            reason = kind
            break
        q += best
        lam[i] += 2.0 * best
        lb = lam[i]
        if best == dq_jump:
            if rng.random() * (rL + rR) < rL:
                j = i - 1
                e = i - 1
            else:
                j = i + 1
                e = i
            forced = -1
            if op[e] == 0:
                op[e] = 1
                forced = e
            i = j
            ev_q[n] = q
            ev_kind[n] = 0
            ev_site[n] = i
            ev_edge[n] = forced
            ev_lb[n] = lb
            ev_la[n] = lam[i]
            n += 1
        else:
            e = i - 1 if best == dq_oL else i
            op[e] = 1
            ev_q[n] = q
            ev_kind[n] = 1
            ev_site[n] = i
            ev_edge[n] = e
            ev_lb[n] = lb
            ev_la[n] = lb
            n += 1
    return (ev_q[:n].copy(), ev_kind[:n].copy(), ev_site[:n].copy(), ev_edge[:n].copy(),
            ev_lb[:n].copy(), ev_la[:n].copy(), lam, op, reason, q, np.inf, 0)


def run_forward_triple(profile_x, lam0, open0, seed, q_max=np.inf, stop_lam_at_origin=None,
                       start=None, max_events=DEFAULT_MAX_EVENTS):
    """Forward triple: the restricted Brownian walk with growing resource and edges.

    The run stops when the resource at the origin reaches ``stop_lam_at_origin``
    (the stopping time of a Brownian path at an inverse local time) or at
    ``q_max``.  One of the two must be finite.
    """
    prof = SiteProfile(profile_x, lam0)
    z = prof.origin
    s = z if start is None else int(start)
    if stop_lam_at_origin is None and not math.isfinite(q_max):
        raise ValueError("need a stopping level or a finite horizon")
    target = -1.0 if stop_lam_at_origin is None else float(stop_lam_at_origin)
    op = np.asarray(open0, dtype=np.int8)
    if op.size != prof.x.size - 1:
        raise ValueError("need one edge state per consecutive pair of sites")
    out = _rise_kernel(make_rng(seed), prof.x, prof.lam, op, s, z if target >= 0 else -1,
                       target, float(q_max), int(max_events))
    return _make_log(prof, s, out, 1.0, seed)


# ---------------------------------------------------------------------------
# martingale diagnostics for lattice runs

@dataclass(frozen=True)
class MartingaleSeries:
    """Moving-scale martingale ``M``, its clock ``U`` and ``Z = M o U^-1``.

    ``t``/``U``/``M`` are sampled at the start of every stay (plus the end);
    ``jumps`` are the jumps of ``M``.
    """
    t: np.ndarray
    U: np.ndarray
    M: np.ndarray
    jumps: np.ndarray
    U_end: float

    def Z(self, u):
        """``Z`` at clock values ``u`` (stopped at the end of the run)."""
        u = np.asarray(u, dtype=float)
        idx = np.searchsorted(self.U, u, side="right") - 1
        return self.M[np.clip(idx, 0, self.M.size - 1)]


def martingale_diagnostics(log, level=None):
    """Rebuild ``M``, ``U`` and ``Z`` from a lattice run.

    Between jumps ``M`` stays put (the scale is pinned at the occupied site);
    a jump from ``x`` to ``x +- h`` moves it by ``+- h / sqrt(lam(x) lam(x +- h))``
    with the current resource.  ``U`` integrates
    ``lam(X)^-3/2 (lam(X-h)^-1/2 + lam(X+h)^-1/2) / 2`` in closed form over each
    stay, the resource at ``X`` falling linearly.
    """
    if level is None:
        level = int(round(-math.log2(log.time_scale)))
    h = 2.0 ** -level
    lam = log.profile.lam.copy()
    m = lam.size
    q0, q1, s, l0, l1 = log.holdings()
    nh = s.size
    U = np.empty(nh + 1)
    M = np.empty(nh + 1)
    t = np.empty(nh + 1)
    jumps = np.empty(max(nh - 1, 0))
    U[0] = 0.0
    M[0] = 0.0
    t[0] = 0.0
    for k in range(nh):
        i = s[k]
        nb = 0.0
        if i > 0:
            nb += lam[i - 1] ** -0.5
        if i < m - 1:
            nb += lam[i + 1] ** -0.5
        a, b = l0[k], l1[k]
        if b > 0:
            du = 0.5 * nb * h * (b ** -0.5 - a ** -0.5)
        else:
            du = np.inf
        lam[i] = b
        U[k + 1] = U[k] + du
        t[k + 1] = q1[k] * log.time_scale
        if k + 1 < nh:
            j = s[k + 1]
            dm = (j - i) * h / math.sqrt(b * lam[j])
            jumps[k] = dm
            M[k + 1] = M[k] + dm
        else:
            M[k + 1] = M[k]
    return MartingaleSeries(t, U, M, jumps, float(U[-1]))
