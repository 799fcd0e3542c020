"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
versions are. Set ``NEPTUNE_KG_KERNELS=python`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("NEPTUNE_KG_KERNELS", "auto").lower() != "python":
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py

bce_logits = _impl.bce_logits
filtered_ranks = _impl.filtered_ranks

__all__ = ["BACKEND", "bce_logits", "filtered_ranks"]
