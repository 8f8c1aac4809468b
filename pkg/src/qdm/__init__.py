"""Quantum diamond microscope simulation and analysis toolkit."""
from ._backend import NAME as backend_name

__version__ = "0.1.0"
__all__ = ["backend_name", "__version__"]
