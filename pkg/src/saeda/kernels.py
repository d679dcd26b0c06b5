"""Loss-kernel backend selection.

The compiled extension ``saeda._kernels`` is used when importable; otherwise
the NumPy implementation in ``saeda._kernels_py``.  Set ``SAEDA_PURE_PYTHON=1``
to force the fallback.
"""
import os

from . import _kernels_py

if os.environ.get("SAEDA_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "compiled" if _impl is not _kernels_py else "python"

centroid_sqdist = _impl.centroid_sqdist
classwise_centroid_sqdist = _impl.classwise_centroid_sqdist
bce = _impl.bce
