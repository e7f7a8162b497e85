"""Numba switch.

Set ``IHID_DISABLE_NUMBA=1`` to run every kernel as plain numpy/python.
The flag is read once at import time.
"""
import os

DISABLE_NUMBA = os.environ.get("IHID_DISABLE_NUMBA", "0").lower() in ("1", "true", "yes")

try:
    if DISABLE_NUMBA:
        raise ImportError
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False
    _njit = None


def maybe_njit(*args, **kwargs):
    """``numba.njit`` when available and enabled, identity otherwise."""
    if HAVE_NUMBA:
        return _njit(*args, cache=True, **kwargs)

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def decorator(func):
        return func

    return decorator


def backend_name():
    return "numba" if HAVE_NUMBA else "numpy"
