"""Correlation kernel backends.

The compiled Cython extension is preferred when importable; the pure-numpy
fallback is selected otherwise, or when REENET_PURE_PYTHON=1 is set. Both
expose the same functions and agree to floating-point roundoff (the parity
tests pin 1e-12).
"""
from __future__ import annotations

import os


def load_backend(name: str):
    """Load a named backend module ("cython" or "numpy")."""
    if name == "cython":
        from reenet._kernels import _corr

        return _corr
    if name == "numpy":
        from reenet._kernels import _corr_py

        return _corr_py
    raise ValueError(f"unknown kernel backend: {name!r}")


if os.environ.get("REENET_PURE_PYTHON", "") not in ("", "0"):
    BACKEND = "numpy"
    _impl = load_backend("numpy")
else:
    try:
        _impl = load_backend("cython")
        BACKEND = "cython"
    except ImportError:
        _impl = load_backend("numpy")
        BACKEND = "numpy"

masked_pearson = _impl.masked_pearson
masked_pearson_batch = _impl.masked_pearson_batch
