"""Free fields on the line, squared Bessel processes and positive bridges.

The free field with value ``a`` at 0 is ``sqrt(2)`` times a two-sided Brownian
motion started from ``a / sqrt(2)``: on the lattice ``2^-n Z`` its increments are
independent ``N(0, 2h)`` with ``h = 2^-n``.
"""
import math
import struct
from dataclasses import dataclass

import numpy as np

from ._accel import jit
from .brownian import _read_bytes, _write_bytes
from .rng import make_rng


@dataclass(frozen=True)
class ScalarField:
    """Values at lattice sites ``site_min .. site_min + len(values) - 1`` of level ``level``."""
    level: int
    site_min: int
    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        if not self.site_min <= 0 < self.site_min + v.size:
            raise ValueError("field must contain site 0")

    @property
    def spacing(self):
        return 2.0 ** -self.level

    @property
    def sites(self):
        return self.site_min + np.arange(self.values.size)

    @property
    def x(self):
        return self.sites * self.spacing

    @property
    def site_max(self):
        return self.site_min + self.values.size - 1

    def at_site(self, k):
        return self.values[np.asarray(k) - self.site_min]

    def at(self, x):
        """Value at lattice coordinate(s) ``x``."""
        k = np.rint(np.asarray(x, dtype=float) / self.spacing).astype(np.int64)
        return self.values[k - self.site_min]

    def window(self, k_lo, k_hi):
        return self.values[k_lo - self.site_min: k_hi - self.site_min + 1]

    def to_csv(self, fh):
        fh.write("site,value\n")
        for k, v in zip(self.sites.tolist(), self.values.tolist()):
            fh.write(f"{int(k)},{v!r}\n")


@dataclass(frozen=True)
class IntervalOfPositivity:
    """Sites strictly between ``left_site`` and ``right_site`` carry positive values.

    The endpoints are the first nonpositive sites.  When the sampled window
    ends before a sign change the endpoint is the window edge plus one and the
    matching ``*_unbounded`` flag is set.
    """
    left_site: int
    right_site: int
    left_unbounded: bool = False
    right_unbounded: bool = False

    def contains(self, k):
        return self.left_site < k < self.right_site


def sample_gff(a, level, half_width, seed):
    """Free field on ``[-half_width, half_width] ∩ 2^-level Z`` with value ``a`` at 0."""
    if not half_width > 0:
        raise ValueError("half_width must be positive")
    if a < 0:
        raise ValueError("boundary value must be >= 0")
    h = 2.0 ** -level
    n = int(math.ceil(half_width / h - 1e-12))
    rng = make_rng(seed)
    steps = rng.standard_normal(2 * n) * math.sqrt(2.0 * h)
    vals = np.empty(2 * n + 1)
    vals[n] = a
    vals[n + 1:] = a + np.cumsum(steps[:n])
    vals[:n] = (a + np.cumsum(steps[n:]))[::-1]
    return ScalarField(int(level), -n, vals)


def positivity_component(field):
    """Maximal run of positive sites around 0."""
    v = field.values
    i0 = -field.site_min
    if not v[i0] > 0:
        raise ValueError("field must be positive at 0")
    nonpos = np.flatnonzero(v <= 0)
    right = nonpos[nonpos > i0]
    left = nonpos[nonpos < i0]
    r_unb = right.size == 0
    l_unb = left.size == 0
    r = v.size if r_unb else int(right[0])
    lft = -1 if l_unb else int(left[-1])
    return IntervalOfPositivity(lft + field.site_min, r + field.site_min, l_unb, r_unb)


@dataclass(frozen=True)
class SampledPath:
    grid: np.ndarray
    values: np.ndarray


def sample_besq(dim, z, grid, seed):
    """Squared Bessel process of dimension ``dim`` from ``z`` at time 0, read at ``grid``.

    Transitions are exact: over a step ``dt`` the next value is
    ``2 dt * Gamma(dim/2 + N)`` with ``N ~ Poisson(Z / (2 dt))``; ``Gamma(0) = 0``
    gives absorption at 0 in dimension 0.
    """
    if dim < 0 or z < 0:
        raise ValueError("dimension and start must be >= 0")
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size == 0 or g[0] < 0 or np.any(np.diff(g) <= 0):
        raise ValueError("grid must be increasing and >= 0")
    rng = make_rng(seed)
    out = np.empty(g.size)
    cur = float(z)
    prev = 0.0
    for i, x in enumerate(g):
        dt = x - prev
        if dt > 0:
            k = rng.poisson(cur / (2.0 * dt))
            shape = 0.5 * dim + k
            cur = 2.0 * dt * rng.standard_gamma(shape) if shape > 0 else 0.0
        out[i] = cur
        prev = x
    return SampledPath(g, out)


# ---------------------------------------------------------------------------
# conditioned interpolation between anchors

@jit
def _bridge(rng, a, b, nsteps, var_step, out):
    cur = a
    for i in range(nsteps - 1):
        left = nsteps - i
        mean = cur + (b - cur) / left
        sd = math.sqrt(var_step * (left - 1) / left)
        cur = mean + sd * rng.standard_normal()
        out[i] = cur


@jit
def _positive_bridge_rejection(rng, a, b, nsteps, var_step, max_tries, out):
    """Plain bridge accepted iff it stays positive between the lattice points too."""
    h_eff = 0.5 * var_step  # field = sqrt(2) * BM, so phi1*phi2/(var/2) is the exponent
    for attempt in range(max_tries):
        _bridge(rng, a, b, nsteps, var_step, out)
        ok = True
        prev = a
        logp = 0.0
        for i in range(nsteps):
            cur = out[i] if i < nsteps - 1 else b
            if cur <= 0.0:
                ok = False
                break
            logp += math.log(-math.expm1(-prev * cur / h_eff))
            prev = cur
        if ok and rng.random() < math.exp(logp):
            return attempt + 1
    return -1


@jit
def _bessel3_bridge(rng, a, b, nsteps, var_step, out):
    # a positive Brownian bridge is the norm of a 3-d bridge whose end point
    # is drawn from the exact (von Mises-Fisher) conditional law on the sphere
    s = math.sqrt(0.5 * var_step)
    alpha = a / math.sqrt(2.0)
    beta = b / math.sqrt(2.0)
    T = nsteps * 0.5 * var_step
    kappa = alpha * beta / T
    u = rng.random()
    w = 1.0 + math.log1p(-(1.0 - u) * (-math.expm1(-2.0 * kappa))) / kappa
    if w > 1.0:
        w = 1.0
    if w < -1.0:
        w = -1.0
    psi = 2.0 * math.pi * rng.random()
    r = math.sqrt(max(0.0, 1.0 - w * w))
    e0 = beta * w
    e1 = beta * r * math.cos(psi)
    e2 = beta * r * math.sin(psi)
    c0 = alpha
    c1 = 0.0
    c2 = 0.0
    for i in range(nsteps - 1):
        left = nsteps - i
        sd = s * math.sqrt((left - 1) / left)
        c0 = c0 + (e0 - c0) / left + sd * rng.standard_normal()
        c1 = c1 + (e1 - c1) / left + sd * rng.standard_normal()
        c2 = c2 + (e2 - c2) / left + sd * rng.standard_normal()
        out[i] = math.sqrt(2.0) * math.sqrt(c0 * c0 + c1 * c1 + c2 * c2)


def positive_bridge(a, b, nsteps, spacing, seed, max_tries=1000):
    """Field bridge from ``a`` to ``b`` over ``nsteps`` lattice steps, conditioned positive.

    Returns ``(interior_values, method)``.  Rejection of plain bridges is used
    first; if ``max_tries`` attempts all fail (acceptance below ``1/max_tries``)
    the exact Bessel-3 bridge construction takes over.
    """
    if not (a > 0 and b > 0):
        raise ValueError("bridge end points must be positive")
    rng = make_rng(seed)
    out = np.empty(max(nsteps - 1, 0))
    if nsteps <= 1:
        return out, "none"
    var_step = 2.0 * spacing
    tries = _positive_bridge_rejection(rng, float(a), float(b), int(nsteps), var_step, int(max_tries), out)
    if tries > 0:
        return out, "rejection"
    _bessel3_bridge(rng, float(a), float(b), int(nsteps), var_step, out)
    return out, "bessel3"


def zero_probability(a, b, dx):
    """Chance that the field bridge from ``a`` to ``b`` over length ``dx`` vanishes somewhere."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.where(a * b > 0, np.exp(-np.abs(a * b) / dx), 1.0)


def first_zero(a, b, dx, rng):
    """Position in ``(0, dx]`` of the first zero of the field bridge from ``a`` to ``b``,
    given that it has one.

    The time change ``u = t dx / (dx - t)`` turns the bridge into a Brownian
    motion (variance 2 per unit) from ``a`` with drift ``b / dx``; conditioned
    to reach 0 its hitting time is inverse Gaussian with mean ``|a| dx / |b|``
    and shape ``a**2 / 2`` (a Levy law when ``b = 0``).
    """
    a, b = abs(float(a)), float(b) * (1.0 if a > 0 else -1.0)
    if a == 0.0:
        return 0.0
    if b == 0.0:
        u = a * a / (2.0 * rng.standard_normal() ** 2)
    else:
        u = rng.wald(a * dx / abs(b), 0.5 * a * a)
    return u * dx / (dx + u)


def interpolate_conditioned_field(anchor_x, anchor_values, level, seed, outside=1.0):
    """Field through the anchors, positive in between, free outside.

    ``anchor_x`` must be points of ``2^-level Z`` and include 0.  Outside
    ``[min J, max J]`` the field continues as free (unconditioned) scaled
    Brownian motions for ``outside`` units on each side.
    """
    ax = np.asarray(anchor_x, dtype=float)
    av = np.asarray(anchor_values, dtype=float)
    if ax.shape != av.shape or ax.size == 0:
        raise ValueError("anchors and values must match")
    if np.any(av <= 0):
        raise ValueError("anchor values must be positive")
    order = np.argsort(ax)
    ax, av = ax[order], av[order]
    h = 2.0 ** -level
    k = np.rint(ax / h).astype(np.int64)
    if np.any(np.abs(k * h - ax) > 1e-9 * np.maximum(1.0, np.abs(ax))):
        raise ValueError("anchors must lie on the lattice")
    if 0 not in k:
        raise ValueError("anchors must include 0")
    if np.any(np.diff(k) <= 0):
        raise ValueError("anchors must be distinct")
    n_out = int(math.ceil(outside / h))
    kmin, kmax = int(k[0]) - n_out, int(k[-1]) + n_out
    vals = np.empty(kmax - kmin + 1)
    rng = make_rng(seed)
    vals[k - kmin] = av
    methods = []
    for i in range(k.size - 1):
        seg, how = positive_bridge(av[i], av[i + 1], int(k[i + 1] - k[i]), h, rng)
        vals[k[i] - kmin + 1: k[i + 1] - kmin] = seg
        methods.append(how)
    sd = math.sqrt(2.0 * h)
    if n_out:
        vals[k[-1] - kmin + 1:] = av[-1] + np.cumsum(rng.standard_normal(n_out) * sd)
        vals[: k[0] - kmin] = (av[0] + np.cumsum(rng.standard_normal(n_out) * sd))[::-1]
    return ScalarField(int(level), kmin, vals)


# ---------------------------------------------------------------------------
# serialization (same container layout as walk logs)

_FIELD_MAGIC = b"SRFD"
_FIELD_HEADER = struct.Struct("<4sBiqQ")


def write_field_binary(field, target):
    head = _FIELD_HEADER.pack(_FIELD_MAGIC, 1, field.level, field.site_min, field.values.size)
    _write_bytes(target, head + np.asarray(field.values, dtype="<f8").tobytes())


def read_field_binary(source):
    data = _read_bytes(source)
    magic, version, level, kmin, n = _FIELD_HEADER.unpack_from(data, 0)
    if magic != _FIELD_MAGIC or version != 1:
        raise ValueError("not a field file")
    vals = np.frombuffer(data, dtype="<f8", count=n, offset=_FIELD_HEADER.size).copy()
    return ScalarField(level, kmin, vals)
