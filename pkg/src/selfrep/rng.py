"""Seeded counter-based random streams.

All stochastic entry points take either an integer seed or an existing
``numpy.random.Generator``.  Integer seeds are expanded into a Philox
(counter-based, 64-bit output) generator keyed by ``(seed, stream)``, so replica
``i`` of an experiment seeded with ``s`` always sees the same stream no matter
how replicas are scheduled across workers.
"""
import numpy as np


def make_rng(seed, stream=0):
    """Return a Philox-backed Generator for ``(seed, stream)``.

    A Generator passed as ``seed`` is returned unchanged.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        raise ValueError("an explicit seed is required")
    seed = int(seed)
    stream = int(stream)
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be non-negative")
    ss = np.random.SeedSequence([seed, stream])
    return np.random.Generator(np.random.Philox(ss))


def replica_rngs(seed, count, offset=0):
    """Generators for replicas ``offset .. offset+count-1`` of an experiment."""
    return [make_rng(seed, offset + i) for i in range(count)]


def child_seed(seed, *labels):
    """Deterministic 63-bit integer derived from ``seed`` and integer labels.

    Used to give independent sub-experiments (e.g. the two sides of an
    identity in law) disjoint seed spaces.
    """
    ss = np.random.SeedSequence([int(seed)] + [int(x) for x in labels])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
