"""Backend selection for the hot kernels.

The compiled extension is used when it imports cleanly; set
``ROISEARCH_PURE_PYTHON=1`` to force the NumPy fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if not os.environ.get("ROISEARCH_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

pair_counts = _impl.pair_counts
hinge_pairs = _impl.hinge_pairs
score_grad = _impl.score_grad
