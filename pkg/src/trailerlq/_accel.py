"""Optional numba acceleration.

Set ``TRAILERLQ_DISABLE_NUMBA=1`` to run every kernel as plain Python/numpy.
The flag is read once at import time.
"""
import os

DISABLE_ENV = "TRAILERLQ_DISABLE_NUMBA"


def _flag_disabled() -> bool:
    return os.environ.get(DISABLE_ENV, "").strip().lower() in ("1", "true", "yes", "on")


try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

NUMBA_ENABLED = numba is not None and not _flag_disabled()


def njit(func):
    """``numba.njit(cache=True, nogil=True)`` or the identity when disabled."""
    if NUMBA_ENABLED:
        return numba.njit(cache=True, nogil=True)(func)
    return func
