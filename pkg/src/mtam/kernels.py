"""Backend selection for the hot kernels.

The compiled extension (``mtam._kernels``) is used when it imports; setting
``MTAM_PURE_PYTHON=1`` forces the numpy fallback. Both expose the same
functions and the same argument conventions.
"""
from __future__ import annotations

import os

from . import _kernels_py

_backend = _kernels_py
if os.environ.get("MTAM_PURE_PYTHON", "").strip() not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        _backend = _compiled

BACKEND: str = _backend.NAME


def use_backend(name: str):
    """Switch backends at runtime (benchmarks and cross-checks); returns the previous name."""
    global _backend, BACKEND
    previous = BACKEND
    if name == "python":
        _backend = _kernels_py
    elif name == "compiled":
        from . import _kernels as _compiled  # type: ignore[attr-defined]

        _backend = _compiled
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = _backend.NAME
    return previous


def compiled_available() -> bool:
    try:
        from . import _kernels  # type: ignore[attr-defined]  # noqa: F401
    except ImportError:
        return False
    return True


def scatter_add_rows(out, ids, rows):
    return _backend.scatter_add_rows(out, ids, rows)


def recurrent_forward(*args):
    return _backend.recurrent_forward(*args)


def recurrent_backward(*args):
    return _backend.recurrent_backward(*args)
