"""Divergent Bass-Burdzy flow ``dY/du = sign(Y - B_u)`` on a grid of initial conditions.

Two integrators share one explicit scheme::

    Y <- Y + du * sign(Y - B)     unless |Y - B| <= du, in which case Y is frozen

* :func:`evolve_flow` keeps every grid line at every step (dense).  It backs the
  :class:`FlowField` objects used for plotting and for the invariant tests.
* :func:`flow_trace` exploits monotonicity: lines below ``B - du`` all move down,
  lines above ``B + du`` all move up, so only the few lines near the driver need
  touching at each step.  Lines are stored lazily as ``base + dir*du*(k - k0)``.
  This is what the diffusion builder uses for long horizons.

Both produce the same numbers up to floating-point re-association.
"""
from dataclasses import dataclass, field

import numpy as np

from ._accel import USE_NUMBA, jit
from .rng import make_rng

STATUS_OK = 0
STATUS_EXHAUSTED = 1
STATUS_BOUNDARY = 2


class GridExhausted(RuntimeError):
    """The driver left the band covered by the flow lines."""

    def __init__(self, step, u):
        super().__init__(f"grid exhausted: driver escaped the flow lines at step {step} (u={u:.6g}); widen the initial grid")
        self.step = step
        self.u = u


class NotConverged(RuntimeError):
    pass


@dataclass(frozen=True)
class DrivingPath:
    du: float
    values: np.ndarray
    seed: object = None

    def __post_init__(self):
        if not self.du > 0:
            raise ValueError("du must be positive")
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ValueError("driver values must be a finite 1-d array")
        object.__setattr__(self, "values", v)

    @property
    def n_steps(self):
        return len(self.values) - 1

    @property
    def u(self):
        return np.arange(len(self.values)) * self.du


def sample_driver(du, n_steps, seed):
    """Standard Brownian motion from 0 on the grid ``k*du``, ``k = 0..n_steps``."""
    rng = make_rng(seed)
    inc = rng.standard_normal(int(n_steps)) * np.sqrt(du)
    vals = np.empty(int(n_steps) + 1)
    vals[0] = 0.0
    np.cumsum(inc, out=vals[1:])
    return DrivingPath(du, vals, seed if not isinstance(seed, np.random.Generator) else None)


def constant_driver(du, n_steps, value=0.0):
    return DrivingPath(du, np.full(int(n_steps) + 1, float(value)))


@dataclass(frozen=True)
class FlowField:
    """Flow lines ``psi[s, i] = Psi_{u_s}(y_i)`` at snapshot steps ``steps``."""
    y: np.ndarray
    steps: np.ndarray
    psi: np.ndarray
    du: float

    @property
    def u(self):
        return self.steps * self.du


@dataclass(frozen=True)
class FlowLocalTimes:
    steps: np.ndarray
    values: np.ndarray
    warnings: tuple = ()


@dataclass(frozen=True)
class InverseTrace:
    steps: np.ndarray
    xi: np.ndarray
    y_bif: float
    converged: bool
    oscillation: float


def default_grid(driver, spacing=1e-2, margin=1.0):
    """Uniform grid wide enough that the driver can never leave it.

    Lines outside the driver's running range are never crossed, so covering
    ``[min B - margin, max B + margin]`` suffices.
    """
    lo = np.floor((driver.values.min() - margin) / spacing) * spacing
    hi = np.ceil((driver.values.max() + margin) / spacing) * spacing
    m = int(round((hi - lo) / spacing)) + 1
    return lo + spacing * np.arange(m)


@jit
def _evolve_dense_loop(B, y, du, stride, n_snap):
    m = y.shape[0]
    Y = y.copy()
    out = np.empty((n_snap, m))
    out[0, :] = Y
    s = 1
    for k in range(B.shape[0] - 1):
        b = B[k]
        for i in range(m):
            d = Y[i] - b
            if d > du:
                Y[i] = Y[i] + du
            elif d < -du:
                Y[i] = Y[i] - du
        if (k + 1) % stride == 0:
            out[s, :] = Y
            s += 1
    return out


def _evolve_dense_numpy(B, y, du, stride, n_snap):
    Y = y.copy()
    out = np.empty((n_snap, y.shape[0]))
    out[0] = Y
    s = 1
    for k in range(B.shape[0] - 1):
        d = Y - B[k]
        move = (d > du).astype(float) - (d < -du)
        Y = Y + du * move
        if (k + 1) % stride == 0:
            out[s] = Y
            s += 1
    return out


_evolve_dense = _evolve_dense_loop if USE_NUMBA else _evolve_dense_numpy


def evolve_flow(driver, initial_grid, snapshot_every=1):
    """Integrate every line of the flow along ``driver``.

    Snapshots are kept every ``snapshot_every`` steps (step 0 included).
    Raises :class:`GridExhausted` if the driver ever leaves the band spanned
    by the outermost lines.
    """
    y = np.asarray(initial_grid, dtype=float)
    if y.ndim != 1 or y.size < 2 or np.any(np.diff(y) <= 0):
        raise ValueError("initial grid must be strictly increasing with at least two lines")
    B = driver.values
    stride = int(snapshot_every)
    if stride < 1:
        raise ValueError("snapshot_every must be >= 1")
    n_snap = driver.n_steps // stride + 1
    psi = _evolve_dense(B, y, float(driver.du), stride, n_snap)
    steps = np.arange(n_snap) * stride
    # outermost lines move at unit speed, so checking at snapshots plus the
    # Lipschitz slack between them is enough to certify containment
    lo_ok = B[steps] >= psi[:, 0]
    hi_ok = B[steps] <= psi[:, -1]
    bad = np.flatnonzero(~(lo_ok & hi_ok))
    if bad.size:
        k = int(steps[bad[0]])
        raise GridExhausted(k, k * driver.du)
    if stride > 1:
        _check_between_snapshots(B, psi, steps, driver.du)
    return FlowField(y, steps, psi, float(driver.du))


def _check_between_snapshots(B, psi, steps, du):
    for s in range(len(steps) - 1):
        k0, k1 = steps[s], steps[s + 1]
        seg = B[k0:k1 + 1]
        slack = (k1 - k0) * du
        if seg.min() < psi[s, 0] - slack or seg.max() > psi[s, -1] + slack:
            # conservative: the bottom line could have been overtaken in between
            if seg.min() < min(psi[s, 0], psi[s + 1, 0]) - slack or seg.max() > max(psi[s, -1], psi[s + 1, -1]) + slack:
                j = k0 + int(np.argmax((seg < psi[s, 0] - slack) | (seg > psi[s, -1] + slack)))
                raise GridExhausted(j, j * du)


def trace_inverse(flow, driver, tol=1e-2, window=0.1):
    """``xi_u = Psi_u^{-1}(B_u)`` at every snapshot, by bisection and linear interpolation."""
    B = driver.values[flow.steps]
    psi = flow.psi
    y = flow.y
    n = len(flow.steps)
    xi = np.empty(n)
    for s in range(n):
        row = psi[s]
        b = B[s]
        if b < row[0] or b > row[-1]:
            k = int(flow.steps[s])
            raise GridExhausted(k, k * flow.du)
        j = int(np.searchsorted(row, b, side="right")) - 1
        j = min(max(j, 0), len(y) - 2)
        frac = (b - row[j]) / (row[j + 1] - row[j])
        xi[s] = y[j] + frac * (y[j + 1] - y[j])
    osc, ok = _trailing_oscillation(xi, tol, window)
    return InverseTrace(flow.steps.copy(), xi, float(xi[-1]), ok, osc)


def _trailing_oscillation(xi, tol, window):
    w = max(1, int(np.ceil(window * len(xi))))
    tail = xi[-w:]
    osc = float(tail.max() - tail.min())
    return osc, bool(osc < tol)


def flow_local_times(flow, warn_below=-1e-3):
    """``Lambda_u(y) = (d Psi_u / dy - 1) / 2`` by finite differences, floored at 0."""
    psi = flow.psi
    y = flow.y
    # differentiate the displacement so that Lambda_0 vanishes exactly
    raw = 0.5 * np.gradient(psi - y, y, axis=1)
    warnings = []
    worst = float(raw.min())
    if worst < warn_below:
        warnings.append(f"grid too coarse: raw local time down to {worst:.3g}")
    return FlowLocalTimes(flow.steps.copy(), np.maximum(raw, 0.0), tuple(warnings))


def estimate_bifurcation(trace, flow, window_cells=5):
    """Final trace value and the flow local time at the nearest line.

    Also checks that the local time at ``y_bif`` dominates the local time
    ``window_cells`` lines away on both sides, which is what a genuine
    bifurcation point looks like at finite horizon.
    """
    if not trace.converged:
        raise NotConverged(f"inverse trace has not settled (trailing oscillation {trace.oscillation:.3g}); use a longer horizon")
    lt = flow_local_times(flow).values[-1]
    i = int(np.argmin(np.abs(flow.y - trace.y_bif)))
    lam_bif = float(lt[i])
    far = []
    if i - window_cells >= 0:
        far.append(lt[: i - window_cells + 1].max())
    if i + window_cells < len(lt):
        far.append(lt[i + window_cells:].max())
    dominates = all(lam_bif > f for f in far)
    return trace.y_bif, lam_bif, dominates


# ---------------------------------------------------------------------------
# sparse integrator


@jit
def _pos(base, dirs, kb, i, k, du):
    return base[i] + dirs[i] * du * (k - kb[i])


@jit
def _flow_trace_kernel(rng, incs, n_steps, du, y0, h, m, lam_y, ylo, yhi,
                       eps, t_query, rec_stride, snap_steps):
    base = np.empty(m)
    dirs = np.empty(m)
    kb = np.zeros(m, dtype=np.int64)
    for i in range(m):
        base[i] = y0 + i * h
    B = 0.0
    lo = 0
    while lo < m and base[lo] < B - du:
        lo += 1
    hi = lo
    while hi < m and base[hi] <= B + du:
        hi += 1
    for i in range(m):
        if i < lo:
            dirs[i] = -1.0
        elif i < hi:
            dirs[i] = 0.0
        else:
            dirs[i] = 1.0

    n_rec = n_steps // rec_stride + 1
    rec_u = np.empty(n_rec)
    rec_t = np.empty(n_rec)
    rec_xi = np.empty(n_rec)
    rec_lam = np.empty(n_rec)
    rec_L = np.empty(n_rec)
    n_snap = snap_steps.shape[0]
    snaps = np.full((n_snap, m), np.nan)
    nq = t_query.shape[0]
    q_xi = np.full(nq, np.nan)
    qi = 0
    si = 0
    use_incs = incs.shape[0] > 0
    sq = np.sqrt(du)

    t = 0.0
    status = 0
    k_end = n_steps
    xi_min = np.inf
    xi_max = -np.inf
    t_eps_last = 0.0
    xi_eps_last = 0.0
    t_eps_first = -1.0
    xi_eps_first = 0.0
    r = 0
    xi = 0.0
    lamx = 0.0
    for k in range(n_steps + 1):
        # snapshots of every line (taken before the step-k update)
        while si < n_snap and snap_steps[si] == k:
            for i in range(m):
                snaps[si, i] = _pos(base, dirs, kb, i, k, du)
            si += 1
        if B < _pos(base, dirs, kb, 0, k, du) or B > _pos(base, dirs, kb, m - 1, k, du):
            status = 1
            k_end = k
            break
        # reclassify lines around the driver
        lo_old = lo
        hi_old = hi
        while lo > 0 and _pos(base, dirs, kb, lo - 1, k, du) >= B - du:
            lo -= 1
        while lo < m and _pos(base, dirs, kb, lo, k, du) < B - du:
            lo += 1
        if hi < lo:
            hi = lo
        while hi > lo and _pos(base, dirs, kb, hi - 1, k, du) > B + du:
            hi -= 1
        while hi < m and _pos(base, dirs, kb, hi, k, du) <= B + du:
            hi += 1
        a = min(lo, lo_old)
        b = max(hi, hi_old)
        for i in range(a, b):
            if i < lo:
                nd = -1.0
            elif i < hi:
                nd = 0.0
            else:
                nd = 1.0
            if nd != dirs[i]:
                base[i] = _pos(base, dirs, kb, i, k, du)
                kb[i] = k
                dirs[i] = nd
        # trace cell
        j = lo - 1
        while j + 1 < hi and _pos(base, dirs, kb, j + 1, k, du) <= B:
            j += 1
        if j < 0:
            j = 0
        if j > m - 2:
            j = m - 2
        pj = _pos(base, dirs, kb, j, k, du)
        pj1 = _pos(base, dirs, kb, j + 1, k, du)
        w = pj1 - pj
        frac = (B - pj) / w
        xi = y0 + (j + frac) * h
        if xi < ylo or xi > yhi:
            status = 2
            k_end = k
            break
        cellL = 0.5 * (w / h - 1.0)
        if cellL < 0.0:
            cellL = 0.0
        lam0 = lam_y[j] + frac * (lam_y[j + 1] - lam_y[j])
        lamx = lam0 / (1.0 + 2.0 * cellL)
        if xi < xi_min:
            xi_min = xi
        if xi > xi_max:
            xi_max = xi
        if lamx > eps:
            t_eps_last = t
            xi_eps_last = xi
        elif t_eps_first < 0.0:
            t_eps_first = t
            xi_eps_first = xi
        if k % rec_stride == 0:
            rec_u[r] = k * du
            rec_t[r] = t
            rec_xi[r] = xi
            rec_lam[r] = lamx
            rec_L[r] = cellL
            r += 1
        if k == n_steps:
            break
        dt = lamx * lamx * du
        while qi < nq and t_query[qi] < t + dt:
            q_xi[qi] = xi
            qi += 1
        t += dt
        if use_incs:
            B += incs[k]
        else:
            B += sq * rng.standard_normal()
    final = np.empty(m)
    for i in range(m):
        final[i] = _pos(base, dirs, kb, i, k_end, du)
    return (status, k_end, t, xi_min, xi_max, t_eps_last, xi_eps_last,
            t_eps_first, xi_eps_first, lamx, xi,
            rec_u[:r], rec_t[:r], rec_xi[:r], rec_lam[:r], rec_L[:r],
            snaps, q_xi, final)


@dataclass(frozen=True)
class FlowTrace:
    """Output of the sparse integrator.

    ``t`` is the running time change ``int lam0(xi)^2 (1+2 Lambda(xi))^-2 du``
    (rectangle rule, cell-local ``Lambda``).  Records are kept every
    ``rec_stride`` steps.
    """
    status: int
    k_end: int
    du: float
    t_total: float
    xi_min: float
    xi_max: float
    t_eps_last: float
    xi_eps_last: float
    t_eps_first: float
    xi_eps_first: float
    lam_end: float
    xi_end: float
    rec_u: np.ndarray
    rec_t: np.ndarray
    rec_xi: np.ndarray
    rec_lam: np.ndarray
    rec_local_time: np.ndarray
    snapshots: np.ndarray
    snap_steps: np.ndarray
    query_xi: np.ndarray
    final_psi: np.ndarray
    y: np.ndarray = field(repr=False, default=None)


def flow_trace(n_steps, du, y_grid, lam_on_grid=None, seed=None, increments=None,
               eps=0.0, y_bounds=(-np.inf, np.inf), t_query=(), rec_stride=1,
               snap_steps=()):
    """Sparse Bass-Burdzy integration returning the inverse trace and time change.

    ``y_grid`` must be uniform.  ``lam_on_grid`` is ``lam0(S0^{-1}(y))`` at the
    lines (ones when omitted, i.e. the flow's own clock).  The driver is drawn
    from ``seed`` unless explicit ``increments`` are supplied.
    """
    y = np.asarray(y_grid, dtype=float)
    m = y.size
    h = (y[-1] - y[0]) / (m - 1)
    if lam_on_grid is None:
        lam_on_grid = np.ones(m)
    lam_on_grid = np.ascontiguousarray(lam_on_grid, dtype=float)
    if increments is None:
        incs = np.empty(0)
        rng = make_rng(seed)
    else:
        incs = np.ascontiguousarray(increments, dtype=float)
        if incs.size < n_steps:
            raise ValueError("need one increment per step")
        rng = make_rng(0 if seed is None else seed)
    tq = np.sort(np.asarray(t_query, dtype=float))
    snaps = np.asarray(snap_steps, dtype=np.int64)
    out = _flow_trace_kernel(rng, incs, int(n_steps), float(du), float(y[0]), float(h), int(m),
                             lam_on_grid, float(y_bounds[0]), float(y_bounds[1]), float(eps),
                             tq, int(rec_stride), snaps)
    return FlowTrace(int(out[0]), int(out[1]), float(du), *map(float, out[2:11]),
                     *out[11:16], out[16], snaps, out[17], out[18], y)
