"""Numba switch.

Hot kernels are compiled with numba when it is importable, unless the
environment variable ``BERTHTRACK_DISABLE_NUMBA`` is set to a truthy value,
in which case the pure numpy implementations in :mod:`berthtrack.kernels`
are used instead.
"""
import os

DISABLE_ENV = "BERTHTRACK_DISABLE_NUMBA"

try:
    import numba as _numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    _numba = None
    HAS_NUMBA = False


def _env_disabled():
    return os.environ.get(DISABLE_ENV, "").strip().lower() in ("1", "true", "yes", "on")


USE_NUMBA = HAS_NUMBA and not _env_disabled()


def njit(fn):
    """Compile ``fn`` in nopython mode if numba is installed.

    Compilation happens regardless of the env flag so both paths stay
    available for cross-checking; the flag only chooses the dispatch.
    """
    if not HAS_NUMBA:
        return fn
    return _numba.njit(cache=True)(fn)
