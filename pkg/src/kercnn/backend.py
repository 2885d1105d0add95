"""Pick the compiled kernels when available, else the pure-Python fallback.

Set ``KERCNN_PURE_PYTHON=1`` to force the fallback.
"""
import os

if os.environ.get("KERCNN_PURE_PYTHON", "") not in ("", "0"):
    from ._fallback import greedy_match, roi_align_batch
    BACKEND = "python"
else:
    try:
        from ._ckernels import greedy_match, roi_align_batch
        BACKEND = "compiled"
    except ImportError:
        from ._fallback import greedy_match, roi_align_batch
        BACKEND = "python"

__all__ = ["BACKEND", "greedy_match", "roi_align_batch"]
