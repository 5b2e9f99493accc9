"""Optional numba acceleration.

Set ``TEXTROBUST_NO_NUMBA=1`` to force the pure-numpy kernels even when numba
is importable. The flag is read once, at import time.
"""
from __future__ import annotations

import os

_DISABLED = os.environ.get("TEXTROBUST_NO_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError
    from numba import njit as _numba_njit

    HAVE_NUMBA = True
except ImportError:
    _numba_njit = None
    HAVE_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise a no-op decorator."""
    if HAVE_NUMBA:
        return _numba_njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def _identity(f):
        return f

    return _identity


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
