"""Self-repelling diffusion built from the Bass-Burdzy flow.

Given an initial occupation profile ``lam0 > 0`` on an interval ``I`` and a
start point ``x0``:

* the scale map is ``S(x) = int_{x0}^x dr / lam0(r)``;
* ``xi_u`` is the inverse trace of the flow, ``Lambda_u`` its local time;
* the clock is ``dt = lam0(S^-1(xi_u))^2 (1 + 2 Lambda_u(xi_u))^-2 du``;
* the particle is ``X_t = S^-1(xi_{u(t)})`` and the remaining profile is
  ``lam_t(x) = lam0(x) / (1 + 2 Lambda_{u(t)}(S(x)))``.

Profiles are stored through ``sqrt(lam0)`` at equally spaced nodes, linearly
interpolated.  On each cell ``int dr/lam0`` then has the closed form
``(x - x_k) / (v_k * v(x))``, so the scale map and its inverse are exact for the
interpolant, exact for constants, and diverge at a simple zero of ``sqrt(lam0)``
inside an end cell (the typical behaviour of a squared free field at its zero).
"""
import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._accel import jit
from .flow import STATUS_BOUNDARY, STATUS_EXHAUSTED, STATUS_OK, GridExhausted, flow_trace
from .rng import make_rng

DEFAULT_DU = 1e-4
DEFAULT_Y_SPACING = 1e-2
DEFAULT_HORIZON = 20.0
ADMISSIBLE_THRESHOLD = 1e3


@dataclass(frozen=True)
class OccupationProfile:
    """``lam0`` through its signed square root at nodes ``x_left + k*spacing``.

    Interior node values must be positive.  An end node may be ``<= 0``: the
    interval then ends at the zero of the linear interpolant inside that cell.
    """
    x_left: float
    spacing: float
    root: np.ndarray
    threshold: float = ADMISSIBLE_THRESHOLD

    def __post_init__(self):
        r = np.ascontiguousarray(self.root, dtype=float)
        object.__setattr__(self, "root", r)
        if r.ndim != 1 or r.size < 2:
            raise ValueError("profile needs at least two nodes")
        if not (self.spacing > 0 and math.isfinite(self.spacing)):
            raise ValueError("profile spacing must be positive")
        if not np.all(np.isfinite(r)):
            raise ValueError("profile values must be finite")
        if np.any(r[1:-1] <= 0):
            raise ValueError("profile must be positive strictly inside its interval")
        if r[0] <= 0 and r[-1] <= 0 and r.size == 2:
            raise ValueError("profile has no positive node")

    @classmethod
    def constant(cls, c, lo, hi, spacing):
        n = int(round((hi - lo) / spacing))
        if n < 1 or abs(n * spacing - (hi - lo)) > 1e-9 * max(1.0, abs(hi - lo)):
            raise ValueError("interval length must be a multiple of the spacing")
        if not c > 0:
            raise ValueError("constant profile must be positive")
        return cls(float(lo), float(spacing), np.full(n + 1, math.sqrt(c)))

    @classmethod
    def from_function(cls, lam, lo, hi, spacing):
        n = int(round((hi - lo) / spacing))
        x = lo + spacing * np.arange(n + 1)
        vals = np.asarray(lam(x), dtype=float)
        if np.any(vals < 0):
            raise ValueError("profile values must be >= 0")
        return cls(float(lo), float(spacing), np.sqrt(vals))

    @classmethod
    def from_roots(cls, x_left, spacing, values):
        """Profile ``values**2`` where ``values`` may change sign in the end cells."""
        return cls(float(x_left), float(spacing), np.asarray(values, dtype=float))

    @property
    def n_nodes(self):
        return self.root.size

    @property
    def x(self):
        return self.x_left + self.spacing * np.arange(self.root.size)

    @property
    def lam(self):
        return np.clip(self.root, 0.0, None) ** 2

    @property
    def left_closed(self):
        return bool(self.root[0] <= 0)

    @property
    def right_closed(self):
        return bool(self.root[-1] <= 0)

    @property
    def interval(self):
        r, h = self.root, self.spacing
        lo = self.x_left
        if r[0] <= 0:
            lo = self.x_left + h * (-r[0]) / (r[1] - r[0])
        hi = self.x_left + h * (r.size - 1)
        if r[-1] <= 0:
            hi = hi - h * (-r[-1]) / (r[-2] - r[-1])
        return lo, hi

    def sqrt_at(self, x):
        """``sqrt(lam0)`` interpolant at ``x`` (negative past an end zero)."""
        x = np.asarray(x, dtype=float)
        h = self.spacing
        k = np.clip(np.floor((x - self.x_left) / h).astype(np.int64), 0, self.root.size - 2)
        xk = self.x_left + h * k
        return self.root[k] + (self.root[k + 1] - self.root[k]) * (x - xk) / h

    def __call__(self, x):
        return np.clip(self.sqrt_at(x), 0.0, None) ** 2

    def admissibility(self, x0=None):
        """``(left, right)`` flags: each end is a zero or ``int 1/lam0`` exceeds the threshold."""
        s = scale_from_profile(self, self._default_start() if x0 is None else x0)
        return bool(-s.nodes[0] > self.threshold), bool(s.nodes[-1] > self.threshold)

    def is_admissible(self, x0=None):
        left, right = self.admissibility(x0)
        return left and right

    def _default_start(self):
        lo, hi = self.interval
        return 0.5 * (lo + hi)

    def with_values(self, root):
        return OccupationProfile(self.x_left, self.spacing, root, self.threshold)


@dataclass(frozen=True)
class ScaleFunction:
    """Exact scale map of the interpolated profile, normalised to vanish at ``x0``.

    ``nodes[k] = S(x_k)``; an end node is infinite when the profile vanishes in
    that end cell.
    """
    profile: OccupationProfile
    x0: float
    nodes: np.ndarray

    @property
    def y_range(self):
        return float(self.nodes[0]), float(self.nodes[-1])

    def __call__(self, x):
        p = self.profile
        x = np.asarray(x, dtype=float)
        lo, hi = p.interval
        if np.any(x < lo) or np.any(x > hi):
            raise ValueError("point outside the profile interval")
        v, h = p.root, p.spacing
        k = np.clip(np.floor((x - p.x_left) / h).astype(np.int64), 0, v.size - 2)
        xk = p.x_left + h * k
        phi = v[k] + (v[k + 1] - v[k]) * (x - xk) / h
        with np.errstate(divide="ignore", invalid="ignore"):
            left = self.nodes[k] + (x - xk) / (v[k] * phi)
            right = self.nodes[np.minimum(k + 1, v.size - 1)] - (xk + h - x) / (v[k + 1] * phi)
        out = np.where(v[k] > 0, left, right)
        out = np.where(phi <= 0, np.where(v[k] > 0, np.inf, -np.inf), out)
        out = np.clip(out, self.nodes[0], self.nodes[-1])
        out = np.where(x == self.x0, 0.0, out)
        return out if out.ndim else float(out)

    def inverse(self, y):
        x, _ = _inverse_arrays(np.asarray(y, dtype=float), self)
        return x if x.ndim else float(x)

    def sqrt_profile_at(self, y):
        """``sqrt(lam0(S^-1(y)))``."""
        _, phi = _inverse_arrays(np.asarray(y, dtype=float), self)
        return phi if phi.ndim else float(phi)


def _inverse_arrays(y, scale):
    p = scale.profile
    lo, hi = scale.y_range
    if np.any(y < lo) or np.any(y > hi):
        raise ValueError("value outside the range of the scale map")
    v, h, S = p.root, p.spacing, scale.nodes
    k = np.clip(np.searchsorted(S, y, side="right") - 1, 0, v.size - 2)
    s = (v[k + 1] - v[k]) / h
    xk = p.x_left + h * k
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        d = y - S[k]
        phi_l = v[k] / (1.0 - s * v[k] * d)
        x_l = xk + v[k] * phi_l * d
        d2 = S[k + 1] - y
        phi_r = v[k + 1] / (1.0 + s * v[k + 1] * d2)
        x_r = xk + h - v[k + 1] * phi_r * d2
    use_left = v[k] > 0
    return np.where(use_left, x_l, x_r), np.where(use_left, phi_l, phi_r)


def scale_from_profile(profile, x0):
    """Scale map ``S(x) = int_{x0}^x dr / lam0(r)`` of the interpolated profile."""
    v, h = profile.root, profile.spacing
    lo, hi = profile.interval
    if not lo < x0 < hi:
        raise ValueError("start point must lie strictly inside the profile interval")
    inc = h / (v[:-1] * v[1:])
    inc[0] = np.inf if v[0] <= 0 else inc[0]
    inc[-1] = np.inf if v[-1] <= 0 else inc[-1]
    # cumulative from the first finite node, then re-centred
    nodes = np.empty(v.size)
    if v[0] <= 0:
        nodes[0] = -np.inf
        nodes[1] = 0.0
        nodes[2:] = np.cumsum(inc[1:])
    else:
        nodes[0] = 0.0
        nodes[1:] = np.cumsum(inc)
    if v[-1] <= 0:
        nodes[-1] = np.inf
    tmp = ScaleFunction(profile, math.nan, nodes)
    s0 = tmp(x0)
    return ScaleFunction(profile, float(x0), nodes - s0)


# ---------------------------------------------------------------------------
# diffusion


@dataclass(frozen=True)
class DiffusionTrajectory:
    """One realisation of the self-repelling diffusion.

    Records (``u``, ``t``, ``xi``, ``x``, ``lam_x``) are kept every
    ``rec_stride`` flow steps.  ``T_total`` is the full time-change integral over
    the simulated horizon; ``T_eps`` the last time the profile at the particle
    exceeded ``eps`` and ``T_eps_first`` the first time it dropped to ``eps`` or
    below.  ``final_lam`` is the profile on the profile nodes at the end.
    """
    profile: OccupationProfile
    scale: ScaleFunction
    x0: float
    du: float
    y_spacing: float
    u_horizon: float
    eps: float
    rec_stride: int
    u: np.ndarray
    t: np.ndarray
    xi: np.ndarray
    x: np.ndarray
    lam_x: np.ndarray
    cell_local_time: np.ndarray
    T_total: float
    T_eps: float
    T_eps_first: float
    x_end: float
    xi_end: float
    x_eps: float
    final_lam: np.ndarray
    status: int
    converged: bool
    flags: dict
    query_t: np.ndarray
    query_x: np.ndarray
    snapshots: dict = field(default_factory=dict, repr=False)
    seed: object = None
    lam_lines: np.ndarray = field(default=None, repr=False)
    y_lines: np.ndarray = field(default=None, repr=False)

    @property
    def boundary_hit(self):
        return self.status == STATUS_BOUNDARY

    @property
    def T_underestimated(self):
        return not self.converged

    def position_at(self, t):
        """``X`` at time(s) ``t`` from the records, frozen after the end."""
        idx = np.searchsorted(self.t, np.asarray(t, dtype=float), side="right") - 1
        return self.x[np.clip(idx, 0, len(self.x) - 1)]

    def local_times(self, t=None):
        lam_t = self.final_lam if t is None else self.snapshots[t]
        return 0.5 * (self.profile.lam - lam_t)

    def summary(self):
        return {
            "T_total": self.T_total, "T_eps": self.T_eps, "T_eps_first": self.T_eps_first,
            "x_end": self.x_end, "xi_end": self.xi_end, "status": int(self.status),
            "converged": bool(self.converged), "flags": dict(self.flags), "seed": self.seed,
            "x0": self.x0, "du": self.du, "y_spacing": self.y_spacing,
            "u_horizon": self.u_horizon, "eps": self.eps,
        }

    def to_csv(self, fh):
        fh.write("t,x\n")
        for t, x in zip(self.t.tolist(), self.x.tolist()):
            fh.write(f"{t!r},{x!r}\n")

    def to_json(self):
        return json.dumps(self.summary(), sort_keys=True)


def _line_grid(u_horizon, h):
    half = h * math.ceil((8.0 * math.sqrt(u_horizon) + 2.0) / h)
    m = int(round(2 * half / h)) + 1
    return -half + h * np.arange(m)


def _lam_on_lines(scale, y):
    lo, hi = scale.y_range
    inside = (y > lo) & (y < hi)
    lam = np.zeros(y.size)
    lam[inside] = scale.sqrt_profile_at(y[inside]) ** 2
    return lam


def build_diffusion(profile, x0, u_horizon=DEFAULT_HORIZON, du=DEFAULT_DU, seed=None, *,
                    y_spacing=DEFAULT_Y_SPACING, eps=0.0, t_query=(), rec_stride=1,
                    snapshot_times=(), trace_tol=1e-2, increments=None):
    """Run the flow-driven construction for ``u`` in ``[0, u_horizon]``.

    Raises :class:`GridExhausted` if the driver leaves the line grid (sized so
    this has negligible probability).  A trace that has not settled by the
    horizon sets ``converged=False`` (the exhaustion time is then an
    underestimate).  ``snapshot_times`` triggers a second, identical pass that
    stores ``lam_t`` at those times.
    """
    if not (du > 0 and u_horizon > 0 and y_spacing > 0):
        raise ValueError("du, u_horizon and y_spacing must be positive")
    if seed is None and increments is None:
        raise ValueError("an explicit seed is required")
    scale = scale_from_profile(profile, x0)
    y = _line_grid(u_horizon, y_spacing)
    lam_y = _lam_on_lines(scale, y)
    n_steps = int(math.ceil(u_horizon / du - 1e-9))
    tq = np.sort(np.asarray(t_query, dtype=float))
    run = dict(n_steps=n_steps, du=du, y_grid=y, lam_on_grid=lam_y, seed=seed,
               increments=increments, eps=eps, y_bounds=scale.y_range, t_query=tq,
               rec_stride=rec_stride)
    tr = flow_trace(**run)
    if tr.status == STATUS_EXHAUSTED:
        raise GridExhausted(tr.k_end, tr.k_end * du)

    snapshots = {}
    if len(snapshot_times):
        want = sorted(float(s) for s in snapshot_times)
        steps = []
        for s in want:
            if tr.rec_t.size and s >= tr.rec_t[-1]:
                steps.append(tr.k_end)
            else:
                j = int(np.searchsorted(tr.rec_t, s, side="right")) - 1
                steps.append(int(round(tr.rec_u[max(j, 0)] / du)))
        tr2 = flow_trace(**dict(run, snap_steps=np.array(steps, dtype=np.int64)))
        for s, row in zip(want, tr2.snapshots):
            snapshots[s] = _profile_from_lines(profile, scale, y, row, y_spacing)

    final_lam = _profile_from_lines(profile, scale, y, tr.final_psi, y_spacing)
    x_rec = _safe_inverse(scale, tr.rec_xi)
    x_end = float(_safe_inverse(scale, np.array([tr.xi_end]))[0])
    x_eps = float(_safe_inverse(scale, np.array([tr.xi_eps_last]))[0])
    qx = tr.query_xi.copy()
    qx[np.isnan(qx)] = tr.xi_end
    query_x = _safe_inverse(scale, qx) if qx.size else np.empty(0)

    osc = _trailing_oscillation(tr.rec_xi)
    converged = tr.status == STATUS_OK and osc < trace_tol
    ymin, ymax = tr.xi_min - y_spacing, tr.xi_max + y_spacing
    window = (y >= ymin) & (y <= ymax)
    sup_lam = float(lam_y[window].max()) if window.any() else 0.0
    bound = 0.5 * (ymax - ymin) * sup_lam ** 2
    lam0_end = float(profile(x_end)) if profile.interval[0] <= x_end <= profile.interval[1] else 0.0
    flags = {
        "time_bound_ok": bool(tr.t_total <= bound * (1 + 1e-9)),
        "exhausted_at_particle": bool(tr.lam_end < 0.05 * lam0_end) if lam0_end > 0 else True,
        "boundary_hit": bool(tr.status == STATUS_BOUNDARY),
        "trace_oscillation": float(osc),
    }
    return DiffusionTrajectory(
        profile=profile, scale=scale, x0=float(x0), du=float(du), y_spacing=float(y_spacing),
        u_horizon=float(u_horizon), eps=float(eps), rec_stride=int(rec_stride),
        u=tr.rec_u, t=tr.rec_t, xi=tr.rec_xi, x=x_rec, lam_x=tr.rec_lam,
        cell_local_time=tr.rec_local_time, T_total=tr.t_total,
        T_eps=tr.t_eps_last, T_eps_first=tr.t_eps_first, x_end=x_end, xi_end=tr.xi_end,
        x_eps=x_eps, final_lam=final_lam, status=tr.status, converged=bool(converged),
        flags=flags, query_t=tq, query_x=query_x, snapshots=snapshots,
        seed=seed if not isinstance(seed, np.random.Generator) else None,
        lam_lines=lam_y, y_lines=y)


def _safe_inverse(scale, xi):
    lo, hi = scale.y_range
    return scale.inverse(np.clip(xi, lo, hi))


def _trailing_oscillation(xi, window=0.1):
    if xi.size < 2:
        return 0.0
    tail = xi[int(xi.size * (1 - window)):]
    return float(tail.max() - tail.min())


def _profile_from_lines(profile, scale, y, psi, h):
    """``lam0(x) / (1 + 2 Lambda(S(x)))`` at the profile nodes, cell-local ``Lambda``."""
    lam0 = profile.lam
    out = np.zeros_like(lam0)
    lo, hi = profile.interval
    xs = profile.x
    inside = (xs > lo) & (xs < hi)
    ys = scale(xs[inside])
    j = np.clip(np.floor((ys - y[0]) / h).astype(np.int64), 0, y.size - 2)
    width = psi[j + 1] - psi[j]
    cell = np.maximum(0.5 * (width / h - 1.0), 0.0)
    out[inside] = lam0[inside] / (1.0 + 2.0 * cell)
    return out


def transfer_path(traj, target_profile, target_x0):
    """Map a trajectory onto another initial profile on the same flow.

    Positions follow ``S_target^-1(S_source(X))`` and time follows
    ``d theta = lam_target(X')^2 / lam_source(X)^2 dt``, with both profiles
    read through the same line tables the builder uses.
    """
    if traj.rec_stride != 1:
        raise ValueError("transfer needs every flow step recorded (rec_stride=1)")
    tscale = scale_from_profile(target_profile, target_x0)
    lo, hi = tscale.y_range
    if traj.xi.size and (traj.xi.min() < lo or traj.xi.max() > hi):
        raise ValueError("scale image escapes the target interval")
    y = traj.y_lines
    lam_t = _lam_on_lines(tscale, y)
    src = _interp_lines(traj.lam_lines, y, traj.xi)
    tgt = _interp_lines(lam_t, y, traj.xi)
    dt = np.diff(traj.t)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(src[:-1] > 0, (tgt[:-1] / src[:-1]) ** 2, 0.0)
    theta = np.empty_like(traj.t)
    theta[0] = 0.0
    np.cumsum(ratio * dt, out=theta[1:])
    x_new = tscale.inverse(traj.xi)
    lam_x = tgt / (1.0 + 2.0 * traj.cell_local_time)
    # remaining time after the last record, with the same ratio
    tail = traj.T_total - traj.t[-1]
    r_last = (tgt[-1] / src[-1]) ** 2 if src[-1] > 0 else 0.0
    T_total = float(theta[-1] + r_last * tail)
    final_lam = _transfer_final(traj, target_profile, tscale)
    x_end = float(tscale.inverse(traj.xi_end))
    tq = traj.query_t
    qx = _position_at(theta, x_new, tq) if tq.size else np.empty(0)
    return DiffusionTrajectory(
        profile=target_profile, scale=tscale, x0=float(target_x0), du=traj.du,
        y_spacing=traj.y_spacing, u_horizon=traj.u_horizon, eps=traj.eps, rec_stride=1,
        u=traj.u, t=theta, xi=traj.xi, x=x_new, lam_x=lam_x,
        cell_local_time=traj.cell_local_time, T_total=T_total,
        T_eps=float("nan"), T_eps_first=float("nan"), x_end=x_end, xi_end=traj.xi_end,
        x_eps=float("nan"), final_lam=final_lam, status=traj.status,
        converged=traj.converged, flags=dict(traj.flags), query_t=tq, query_x=qx,
        seed=traj.seed, lam_lines=lam_t, y_lines=y)


def _transfer_final(traj, target, tscale):
    # the flow's local time is a function of y only, so it can be read off the
    # source's final profile: 1 + 2 Lambda = lam0_src / lam_src
    src = traj.profile
    xs = target.x
    lo, hi = target.interval
    out = np.zeros(xs.size)
    inside = (xs > lo) & (xs < hi)
    ys = tscale(xs[inside])
    slo, shi = traj.scale.y_range
    ok = (ys > slo) & (ys < shi)
    xsrc = traj.scale.inverse(ys[ok])
    lam0_s = src(xsrc)
    lam_s = np.interp(xsrc, src.x, traj.final_lam)
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(lam_s > 0, lam0_s / lam_s, np.inf)
    vals = np.zeros(ys.size)
    vals[ok] = target.lam[inside][ok] / factor
    out[inside] = vals
    return out


def _interp_lines(table, y, xi):
    h = y[1] - y[0]
    j = np.clip(np.floor((xi - y[0]) / h).astype(np.int64), 0, y.size - 2)
    frac = (xi - (y[0] + j * h)) / h
    return table[j] + frac * (table[j + 1] - table[j])


def _position_at(t, x, query):
    idx = np.searchsorted(t, query, side="right") - 1
    return x[np.clip(idx, 0, x.size - 1)]


# ---------------------------------------------------------------------------
# exit race

EXIT_RIGHT = "exit_right"
EXIT_LEFT = "exit_left"
EXHAUSTED = "exhausted"
UNDECIDED = "undecided"


@jit
def _race_kernel(rng, up, down, du, n_steps, certify):
    # B - u against the upper target, B + u against the lower one; crossings
    # between grid points are detected with the Brownian-bridge probability.
    B = 0.0
    sq = math.sqrt(du)
    for k in range(n_steps):
        u0 = k * du
        b1 = B + sq * rng.standard_normal()
        p0 = B - u0
        p1 = b1 - u0 - du
        q0 = B + u0
        q1 = b1 + u0 + du
        if p1 >= up:
            return 1, (k + 1) * du
        if up - p0 > 0 and up - p1 > 0:
            if rng.random() < math.exp(-2.0 * (up - p0) * (up - p1) / du):
                return 1, (k + 1) * du
        if q1 <= down:
            return -1, (k + 1) * du
        if q0 - down > 0 and q1 - down > 0:
            if rng.random() < math.exp(-2.0 * (q0 - down) * (q1 - down) / du):
                return -1, (k + 1) * du
        B = b1
    U = n_steps * du
    # probability that the drifted paths still reach their targets later
    rest_up = math.exp(-2.0 * (up - (B - U))) if up < np.inf else 0.0
    rest_down = math.exp(-2.0 * ((B + U) - down)) if down > -np.inf else 0.0
    if rest_up + rest_down < certify:
        return 0, U
    return 2, U


def race(s_up, s_down, seed, du=1e-2, u_horizon=40.0, certify=1e-6):
    """Race of ``B_u - u`` up to ``s_up`` against ``B_u + u`` down to ``s_down``.

    Returns ``(outcome, u)``.  ``exhausted`` means neither target was reached by
    the horizon and the chance of a later hit is below ``certify``; otherwise
    the horizon outcome is ``undecided``.
    """
    if not s_down < 0 < s_up:
        raise ValueError("targets must straddle 0")
    code, u = _race_kernel(make_rng(seed), float(s_up), float(s_down), float(du),
                           int(math.ceil(u_horizon / du)), float(certify))
    return {1: EXIT_RIGHT, -1: EXIT_LEFT, 0: EXHAUSTED, 2: UNDECIDED}[int(code)], float(u)


def exit_race(profile, x0, a, b, seed, du=1e-2, u_horizon=40.0):
    """Which end of ``(a, b)`` the diffusion from ``x0`` leaves by, if any."""
    if not a < x0 < b:
        raise ValueError("need a < x0 < b")
    scale = scale_from_profile(profile, x0)
    lo, hi = profile.interval
    if not (lo < a and b < hi):
        raise ValueError("a and b must lie inside the profile interval")
    return race(scale(b), scale(a), seed, du=du, u_horizon=u_horizon)[0]
