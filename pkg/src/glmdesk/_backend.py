"""Kernel backend selection.

Hot loops are written twice: once as a numba ``@njit`` kernel and once as a
vectorised numpy routine.  The active backend is read from the
``GLMDESK_BACKEND`` environment variable at import time (``numba`` or
``numpy``); when numba cannot be imported the numpy path is used regardless.
Tests and benchmarks switch at runtime with :func:`use_backend`.
"""

from __future__ import annotations

import contextlib
import os
import warnings

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

BACKENDS = ("numba", "numpy")


def _initial_backend() -> str:
    requested = os.environ.get("GLMDESK_BACKEND", "numba").strip().lower()
    if requested not in BACKENDS:
        warnings.warn(f"unknown GLMDESK_BACKEND={requested!r}, using numpy")
        return "numpy"
    if requested == "numba" and not HAS_NUMBA:
        return "numpy"
    return requested


_active = _initial_backend()


def active_backend() -> str:
    return _active


def set_backend(name: str) -> None:
    global _active
    if name not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}, got {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba is not installed")
    _active = name


@contextlib.contextmanager
def use_backend(name: str):
    previous = _active
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def njit(fn):
    """Compile ``fn`` with numba in nopython mode; identity without numba.

    ``fastmath`` stays off so the compiled loop keeps the exact IEEE
    operation order of the source.
    """
    if not HAS_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def use_numba() -> bool:
    return _active == "numba"
