"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the numpy versions
are used. Setting ``OWCL_KERNELS=python`` forces the fallback.
"""

import os

from . import _pykernels

if os.environ.get("OWCL_KERNELS", "").lower() == "python":
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

logsumexp_rows = _impl.logsumexp_rows
moas_batch = _impl.moas_batch
combine_batch = _impl.combine_batch
signed_rank_counts = _impl.signed_rank_counts
mann_whitney_count = _impl.mann_whitney_count

__all__ = [
    "BACKEND",
    "logsumexp_rows",
    "moas_batch",
    "combine_batch",
    "signed_rank_counts",
    "mann_whitney_count",
]
