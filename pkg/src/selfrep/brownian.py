"""Brownian motion as a continuous-time nearest-neighbour walk on ``2^-n Z``.

At level ``n`` each neighbour is reached at rate ``2^(2n-1)``, so holding times
are exponential with mean ``2^(-2n)`` and the walk has unit diffusivity.  The
local time of a site grows at rate ``2^n`` while the walk sits there, which
makes lattice local times exact occupation densities.
"""
import math
import struct
from dataclasses import dataclass

import numpy as np

from ._accel import jit
from .rng import make_rng

DEFAULT_MAX_EVENTS = 10**6

STOP_NONE = 0
STOP_JUMPS = 1
STOP_TIME = 2
STOP_LOCAL_TIME = 3
STOP_HIT = 4


@dataclass(frozen=True)
class StopRule:
    """Stopping predicate understood by the walk kernel.

    ``kind`` is one of the ``STOP_*`` codes; ``site``/``value`` carry the
    parameters (jump count, time horizon, local-time threshold, target site).
    """
    kind: int
    site: int = 0
    value: float = 0.0

    @classmethod
    def after_jumps(cls, k):
        return cls(STOP_JUMPS, 0, float(int(k)))

    @classmethod
    def at_time(cls, t):
        if t < 0:
            raise ValueError("time horizon must be >= 0")
        return cls(STOP_TIME, 0, float(t))

    @classmethod
    def on_hit(cls, site):
        return cls(STOP_HIT, int(site), 0.0)

    @classmethod
    def never(cls):
        return cls(STOP_NONE)


def inverse_local_time_stop(level, site, rho):
    """Stop as soon as the local time at ``site`` exceeds ``rho``.

    The walk is cut inside the holding interval at the exact crossing, so the
    stopped path has local time exactly ``rho`` at ``site``.
    """
    if not rho > 0:
        raise ValueError("local-time threshold must be positive")
    return StopRule(STOP_LOCAL_TIME, int(site), float(rho))


@dataclass(frozen=True)
class LatticeWalkPath:
    """Event log of a lattice walk: the walk sits at ``sites[i]`` for ``holds[i]``."""
    level: int
    sites: np.ndarray
    holds: np.ndarray
    truncated: bool = False
    seed: object = None

    @property
    def start(self):
        return int(self.sites[0])

    @property
    def n_events(self):
        return len(self.sites)

    @property
    def times(self):
        """Arrival time at each logged state (first entry is 0)."""
        out = np.empty(len(self.holds))
        out[0] = 0.0
        if len(self.holds) > 1:
            np.cumsum(self.holds[:-1], out=out[1:])
        return out

    @property
    def total_time(self):
        return math.fsum(self.holds)

    @property
    def spacing(self):
        return 2.0 ** -self.level

    def position_at(self, t):
        """Site occupied at time(s) ``t`` (right-continuous)."""
        times = self.times
        idx = np.searchsorted(times, np.asarray(t, dtype=float), side="right") - 1
        return self.sites[np.clip(idx, 0, len(times) - 1)]


@dataclass(frozen=True)
class LocalTimeProfile:
    level: int
    site_min: int
    values: np.ndarray

    @property
    def sites(self):
        return self.site_min + np.arange(len(self.values))

    def at(self, site):
        i = int(site) - self.site_min
        if 0 <= i < len(self.values):
            return float(self.values[i])
        return 0.0

    def occupation(self):
        """Total time recorded in the profile, ``sum 2^-n * l(x)``."""
        return math.fsum(self.values) * 2.0 ** -self.level


@jit
def _walk_kernel(rng, level, start, kind, p_site, p_value, max_events):
    rate = 2.0 ** (2 * level)
    scale = 2.0 ** level
    cap = max_events + 1
    sites = np.empty(cap, dtype=np.int64)
    holds = np.empty(cap)
    x = start
    t = 0.0
    ell = 0.0
    n = 0
    truncated = False
    n_jumps_target = int(p_value)
    while True:
        if kind == 1 and n == n_jumps_target:
            sites[n] = x
            holds[n] = 0.0
            n += 1
            break
        hold = rng.standard_exponential() / rate
        sites[n] = x
        if kind == 3 and x == p_site:
            if ell + hold * scale >= p_value:
                holds[n] = (p_value - ell) / scale
                n += 1
                break
            ell += hold * scale
        if kind == 2 and t + hold >= p_value:
            holds[n] = p_value - t
            n += 1
            break
        holds[n] = hold
        t += hold
        n += 1
        if n >= max_events:
            truncated = True
            break
        if rng.random() < 0.5:
            x += 1
        else:
            x -= 1
        if kind == 4 and x == p_site:
            sites[n] = x
            holds[n] = 0.0
            n += 1
            break
    return sites[:n].copy(), holds[:n].copy(), truncated


def sample_walk(level, start_site, stop_rule, seed, max_events=DEFAULT_MAX_EVENTS):
    """Simulate the level-``level`` walk from ``start_site`` until ``stop_rule`` fires.

    Hitting ``max_events`` sets ``truncated`` on the result instead of raising.
    ``stop_rule`` may also be a plain callable ``(path) -> bool`` evaluated after
    each event; that path runs in Python and is meant for small experiments.
    """
    level = int(level)
    if level < 0:
        raise ValueError("level must be >= 0")
    rng = make_rng(seed)
    if callable(stop_rule) and not isinstance(stop_rule, StopRule):
        return _sample_walk_callable(level, int(start_site), stop_rule, rng, max_events, seed)
    if stop_rule.kind == STOP_NONE and max_events is None:
        raise ValueError("a walk with no stopping rule needs a horizon cap")
    sites, holds, trunc = _walk_kernel(rng, level, int(start_site), int(stop_rule.kind),
                                       int(stop_rule.site), float(stop_rule.value), int(max_events))
    return LatticeWalkPath(level, sites, holds, bool(trunc), _seed_tag(seed))


def _sample_walk_callable(level, start, pred, rng, max_events, seed):
    rate = 2.0 ** (2 * level)
    sites = [start]
    holds = []
    x = start
    while True:
        holds.append(rng.standard_exponential() / rate)
        path = LatticeWalkPath(level, np.array(sites), np.array(holds), False)
        if pred(path):
            return LatticeWalkPath(level, path.sites, path.holds, False, _seed_tag(seed))
        if len(sites) >= max_events:
            return LatticeWalkPath(level, path.sites, path.holds, True, _seed_tag(seed))
        x += 1 if rng.random() < 0.5 else -1
        sites.append(x)


def _seed_tag(seed):
    return None if isinstance(seed, np.random.Generator) else seed


def local_time_profile(path, t=None):
    """Local times ``2^n * occupation`` of every visited site up to time ``t``."""
    total = path.total_time
    if t is None:
        t = total
    if t < 0 or t > total * (1 + 1e-12) + 1e-300:
        raise ValueError(f"t={t} outside [0, {total}]")
    times = path.times
    dur = np.clip(np.minimum(times + path.holds, t) - times, 0.0, None)
    lo = int(path.sites.min())
    vals = np.bincount(path.sites - lo, weights=dur, minlength=int(path.sites.max()) - lo + 1)
    return LocalTimeProfile(path.level, lo, vals * 2.0 ** path.level)


def reverse_path(path, from_time=None):
    """Replay ``path`` backwards from ``from_time`` (default: its end).

    Reversing from the end only reverses the event arrays, so applying it twice
    returns the original path bit for bit.
    """
    total = path.total_time
    if from_time is None or from_time >= total:
        if from_time is not None and from_time > total * (1 + 1e-12):
            raise ValueError("from_time beyond the end of the path")
        return LatticeWalkPath(path.level, path.sites[::-1].copy(), path.holds[::-1].copy(),
                               path.truncated, path.seed)
    if from_time < 0:
        raise ValueError("from_time must be >= 0")
    times = path.times
    i = int(np.searchsorted(times, from_time, side="right")) - 1
    partial = from_time - times[i]
    holds = np.concatenate(([partial], path.holds[:i][::-1]))
    sites = path.sites[: i + 1][::-1].copy()
    return LatticeWalkPath(path.level, sites, holds, path.truncated, path.seed)


@jit
def _censored_local_times(rng, level, rho, lo, hi):
    rate = 2.0 ** (2 * level)
    scale = 2.0 ** level
    ell = np.zeros(hi - lo + 1)
    x = 0
    i0 = -lo
    while True:
        inc = rng.standard_exponential() / rate * scale
        if x == 0 and ell[i0] + inc >= rho:
            ell[i0] = rho
            break
        ell[x - lo] += inc
        if rng.random() < 0.5:
            if x < hi:
                x += 1
        elif x > lo:
            x -= 1
    return ell


def stopped_local_times(level, rho, window, seed):
    """Local times inside ``window`` of the walk from 0 stopped at ``inverse_local_time_stop(0, rho)``.

    Excursions that leave the window return to its edge without touching the
    inside, so they are collapsed into a fresh holding period at the edge site.
    The local times inside the window are exact; elapsed time outside is not
    tracked.  ``window`` is a pair of site indices containing 0.
    """
    lo, hi = int(window[0]), int(window[1])
    if not lo <= 0 <= hi:
        raise ValueError("window must contain site 0")
    if not rho > 0:
        raise ValueError("rho must be positive")
    ell = _censored_local_times(make_rng(seed), int(level), float(rho), lo, hi)
    return LocalTimeProfile(int(level), lo, ell)


# ---------------------------------------------------------------------------
# serialization

_WALK_MAGIC = b"SRWK"
_WALK_HEADER = struct.Struct("<4sBiqqQ?")


def write_walk_binary(path, fh_or_name):
    """Compact log: header (level, start, seed, n) then +-1 site steps and holds."""
    seed = path.seed if isinstance(path.seed, (int, np.integer)) else -1
    steps = np.diff(path.sites).astype(np.int8)
    head = _WALK_HEADER.pack(_WALK_MAGIC, 1, path.level, path.start, int(seed), path.n_events, path.truncated)
    data = head + steps.tobytes() + np.asarray(path.holds, dtype="<f8").tobytes()
    _write_bytes(fh_or_name, data)


def read_walk_binary(fh_or_name):
    data = _read_bytes(fh_or_name)
    magic, version, level, start, seed, n, trunc = _WALK_HEADER.unpack_from(data, 0)
    if magic != _WALK_MAGIC or version != 1:
        raise ValueError("not a walk log")
    off = _WALK_HEADER.size
    steps = np.frombuffer(data, dtype=np.int8, count=n - 1, offset=off).astype(np.int64)
    off += n - 1
    holds = np.frombuffer(data, dtype="<f8", count=n, offset=off).copy()
    sites = np.empty(n, dtype=np.int64)
    sites[0] = start
    np.cumsum(steps, out=sites[1:])
    sites[1:] += start
    return LatticeWalkPath(level, sites, holds, bool(trunc), None if seed < 0 else seed)


def walk_to_csv(path, fh):
    fh.write("time,site\n")
    for t, s in zip(path.times.tolist(), path.sites.tolist()):
        fh.write(f"{t!r},{int(s)}\n")


def _write_bytes(target, data):
    if hasattr(target, "write"):
        target.write(data)
    else:
        with open(target, "wb") as fh:
            fh.write(data)


def _read_bytes(source):
    if hasattr(source, "read"):
        return source.read()
    with open(source, "rb") as fh:
        return fh.read()
