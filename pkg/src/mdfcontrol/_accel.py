"""Optional numba acceleration.

Hot kernels are written once in a numba-compatible subset of numpy and
compiled with ``njit`` when numba is importable. Setting the environment
variable ``MDFCONTROL_DISABLE_NUMBA=1`` forces the pure-numpy fallback path,
which is also used automatically when numba is missing.
"""
import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False

DISABLE_ENV = "MDFCONTROL_DISABLE_NUMBA"


def numba_enabled():
    """True when compiled kernels should be used for this call."""
    if not HAVE_NUMBA:
        return False
    return os.environ.get(DISABLE_ENV, "").strip().lower() not in ("1", "true", "yes", "on")


def njit(func):
    """``numba.njit(cache=True)`` when available, identity otherwise."""
    if HAVE_NUMBA:
        return numba.njit(cache=True)(func)
    return func
