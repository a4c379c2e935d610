"""Backend selection for the hot kernels.

Set ``CONXNET_DISABLE_NUMBA=1`` to force the pure-numpy path. The numba path
is also skipped when numba cannot be imported.
"""
import os

_DISABLE = os.getenv("CONXNET_DISABLE_NUMBA", "0").strip().lower() in ("1", "true", "yes", "on")

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not _DISABLE
BACKEND = "numba" if USE_NUMBA else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, otherwise a no-op decorator."""
    if HAS_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)

    def wrap(fn):
        return fn

    if args and callable(args[0]):
        return args[0]
    return wrap
