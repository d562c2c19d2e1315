"""Content-aware redundancy elimination (CARE) for disaster-area DTNs."""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
