"""Hot-loop kernels, compiled when available.

Set ``TDSLAB_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from . import _fallback

BACKEND = "python"

if os.environ.get("TDSLAB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = _fallback
else:
    _impl = _fallback

scatter_add_rows = _impl.scatter_add_rows
seq_pool = _impl.seq_pool
seq_pool_backward = _impl.seq_pool_backward
midrank_auc = _impl.midrank_auc
grouped_auc = _impl.grouped_auc

__all__ = [
    "BACKEND",
    "scatter_add_rows",
    "seq_pool",
    "seq_pool_backward",
    "midrank_auc",
    "grouped_auc",
]
