"""Optional numba acceleration.

Every hot kernel in the package is written once as plain Python/numpy code and
wrapped with :func:`jit`.  When numba is importable and ``SELFREP_NUMBA`` is not
set to ``0``, the kernels are compiled with ``numba.njit``; otherwise the same
functions run as ordinary Python.  Random draws go through a
``numpy.random.Generator`` in both modes, and numba reproduces numpy's streams
bit for bit, so the two paths give identical results for identical seeds.
"""
import os

_FLAG = os.environ.get("SELFREP_NUMBA", "1").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and _FLAG not in ("0", "false", "no", "off")


def jit(fn=None, **kwargs):
    """``numba.njit(cache=True)`` when acceleration is on, identity otherwise."""
    def wrap(f):
        if not USE_NUMBA:
            return f
        opts = {"cache": True}
        opts.update(kwargs)
        return numba.njit(**opts)(f)

    if fn is not None:
        return wrap(fn)
    return wrap


def backend():
    return "numba" if USE_NUMBA else "python"
