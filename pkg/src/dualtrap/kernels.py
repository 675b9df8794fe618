"""Kernel selection: the compiled extension when available, else the Python twins.

Set ``DUALTRAP_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
if os.environ.get("DUALTRAP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    else:
        BACKEND = "cython"
else:
    _compiled = None

_impl = _compiled if _compiled is not None else _kernels_py
integrate_electrodes = _impl.integrate_electrodes
integrate_harmonic = _impl.integrate_harmonic


def get_backend(name=None):
    """Return the kernel module for ``name`` ('cython', 'python' or None for the default)."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            from . import _kernels
            return _kernels
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")
