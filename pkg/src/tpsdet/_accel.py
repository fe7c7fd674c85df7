"""Backend switch for the numba-compiled kernels.

Set ``TPSDET_DISABLE_NUMBA=1`` to run every hot loop through its pure
numpy/scipy twin instead.  The choice can also be flipped at runtime with
:func:`set_backend`, which the kernel benchmark and the equivalence tests use.
"""
import os

try:
    from numba import njit as _numba_njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False
    _numba_njit = None

_DISABLED = os.environ.get("TPSDET_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")
_backend = "numba" if HAVE_NUMBA and not _DISABLED else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise a no-op decorator."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        kwargs.setdefault("nogil", True)
        return _numba_njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def backend() -> str:
    return _backend


def set_backend(name: str) -> str:
    """Select ``"numba"`` or ``"numpy"``; returns the previous backend."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    prev, _backend = _backend, name
    return prev


def use_numba() -> bool:
    return _backend == "numba"
