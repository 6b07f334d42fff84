"""Backend selection for the density-matrix stepping kernels.

The compiled extension is used when it imports; otherwise the numpy/scipy
fallback is used. Setting ``THERMBATH_PURE_PYTHON=1`` forces the fallback.
``BACKEND`` names the active implementation.
"""
from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("THERMBATH_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
        BACKEND = "python"

rhs = _impl.rhs
propagate = _impl.propagate

__all__ = ["BACKEND", "rhs", "propagate", "python_backend"]


def python_backend():
    """Return the pure-Python kernel module (for cross-checks and benchmarks)."""
    return _kernels_py
