"""Hot-loop kernels: compiled extension when built, numpy fallback otherwise.

Set ``CARE_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
if not os.environ.get("CARE_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
else:
    _impl = _pykernels

oracle_scan = _impl.oracle_scan
contact_pairs = _impl.contact_pairs
hamming_matrix = _impl.hamming_matrix
pair_uniform = _impl.pair_uniform
