"""Numba switch.

Set ``TOPOSTAB_DISABLE_JIT=1`` to run every kernel through its pure
numpy/Python fallback instead of the compiled path.  Useful for debugging
and for the kernel benchmark.
"""

import os

_FLAG = os.environ.get("TOPOSTAB_DISABLE_JIT", "0").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None

JIT_ENABLED = numba is not None and _FLAG not in ("1", "true", "yes", "on")


def njit(func=None, **kwargs):
    """``numba.njit`` when enabled, identity otherwise."""
    if JIT_ENABLED:
        if func is not None:
            return numba.njit(cache=True, **kwargs)(func)
        return numba.njit(cache=True, **kwargs)
    if func is not None:
        return func

    def wrapper(f):
        return f

    return wrapper
