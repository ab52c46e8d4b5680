"""Numba switch.

Set ``ELSROC_DISABLE_NUMBA=1`` (or have numba missing) to run every hot
kernel through its pure-numpy path. The flag is read once at import time.
"""

import os

_disabled = os.environ.get("ELSROC_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes"}

try:
    if _disabled:
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _disabled
BACKEND = "numba" if USE_NUMBA else "numpy"


def njit(func=None, **kwargs):
    """``numba.njit`` when enabled, identity otherwise."""
    if not USE_NUMBA:
        if func is not None:
            return func
        return lambda f: f
    kwargs.setdefault("cache", True)
    if func is not None:
        return numba.njit(**kwargs)(func)
    return numba.njit(**kwargs)
