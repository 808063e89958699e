"""Kernel backend selection.

The compiled extension is used when it imports cleanly; setting
``NUGGETBANK_PURE_PYTHON=1`` forces the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("NUGGETBANK_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _kernels_py
        BACKEND = "python"

svm_dual_cd = _impl.svm_dual_cd
kendall_pair_counts = _impl.kendall_pair_counts
weighted_pair_sums = _impl.weighted_pair_sums
signed_rank_null_counts = _impl.signed_rank_null_counts

__all__ = [
    "BACKEND",
    "svm_dual_cd",
    "kendall_pair_counts",
    "weighted_pair_sums",
    "signed_rank_null_counts",
]
