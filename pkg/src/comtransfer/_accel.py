"""Numba switch.

Set ``COMTRANSFER_DISABLE_NUMBA=1`` before import to force the pure-numpy
kernels. The jitted and fallback variants are always both importable so the
benchmark and the parity tests can call either one directly.
"""
import os

DISABLE_ENV = "COMTRANSFER_DISABLE_NUMBA"

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def _disabled_by_env():
    return os.environ.get(DISABLE_ENV, "").strip().lower() in ("1", "true", "yes", "on")


USE_NUMBA = HAVE_NUMBA and not _disabled_by_env()


def njit(func):
    """``numba.njit(cache=True)`` when numba is importable, else identity."""
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True)(func)


def backend():
    return "numba" if USE_NUMBA else "numpy"
