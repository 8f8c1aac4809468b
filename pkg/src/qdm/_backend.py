"""Select the kernel implementation at import time.

The compiled extension is used when it imports; set ``QDM_BACKEND=python`` to
force the numpy fallback (``QDM_BACKEND=cython`` makes a missing extension an
error instead of a silent fallback).
"""
import os

from .errors import ConfigError

_choice = os.environ.get("QDM_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "python", "cython"):
    raise ConfigError(f"QDM_BACKEND must be auto, python or cython, got {_choice!r}")

kernels = None
if _choice != "python":
    try:
        from . import _kernels as kernels
    except ImportError:
        if _choice == "cython":
            raise
if kernels is None:
    from . import _kernels_py as kernels

NAME = kernels.NAME


def get(name=None):
    """Return a kernel module by name ('python', 'cython') or the active one."""
    if name is None:
        return kernels
    if name == "python":
        from . import _kernels_py
        return _kernels_py
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ConfigError(f"unknown backend {name!r}")
