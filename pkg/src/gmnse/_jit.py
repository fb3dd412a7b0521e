"""
Numba switch.

Set ``GMNSE_DISABLE_JIT=1`` in the environment before importing the package
to run every kernel through its pure-numpy path instead.
"""

import os

JIT_ENABLED = os.environ.get("GMNSE_DISABLE_JIT", "0").lower() not in ("1", "true", "yes")

if JIT_ENABLED:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        JIT_ENABLED = False

if not JIT_ENABLED:

    def njit(func=None, **kwargs):
        if func is not None:
            return func

        def wrapper(f):
            return f

        return wrapper
