"""numba switch: compiled kernels unless numba is missing or DOHPOOL_DISABLE_NUMBA is set."""

import os

DISABLE_ENV = "DOHPOOL_DISABLE_NUMBA"

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get(DISABLE_ENV, "").strip().lower() not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """numba.njit when available, otherwise a pass-through decorator."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f
