"""Kernel backend selection.

Two interchangeable kernel modules exist:

* ``numba`` -- jitted direct-convolution kernels (default, much faster on
  the small channel counts used here),
* ``numpy`` -- pure-numpy im2col fallback.

The active backend is chosen once at import from the ``EVONAS_BACKEND``
environment variable (``numba`` or ``numpy``) and can be switched at
runtime with :func:`set_backend`, which tests and the backend benchmark
use.  If numba is unavailable the fallback is selected automatically.
"""

import logging
import os

log = logging.getLogger(__name__)

_BACKENDS = ("numba", "numpy")
_active = None
_active_name = ""


def _load(name):
    if name == "numba":
        from evonas import kernels_numba as mod
    else:
        from evonas import kernels_numpy as mod
    return mod


def set_backend(name):
    """Select the kernel backend; returns the previously active name."""
    global _active, _active_name
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}, expected one of {_BACKENDS}")
    previous = _active_name
    _active = _load(name)
    _active_name = name
    return previous


def get_backend():
    """Name of the active backend."""
    return _active_name


def kernels():
    """The active kernel module."""
    return _active


def _init_from_env():
    requested = os.environ.get("EVONAS_BACKEND", "numba").lower()
    if requested not in _BACKENDS:
        raise ValueError(
            f"EVONAS_BACKEND={requested!r} not recognized; use 'numba' or 'numpy'")
    if requested == "numba":
        try:
            set_backend("numba")
            return
        except ImportError:  # pragma: no cover - depends on environment
            log.warning("numba unavailable, falling back to numpy kernels")
    set_backend("numpy")


_init_from_env()
