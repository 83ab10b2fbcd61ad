"""Backend selection for the ring kernels.

The compiled extension ``blowup._ring`` is used when it imports; otherwise
the numpy/scipy implementation in ``blowup._ring_py`` is used. Setting
``BLOWUP_PURE_PYTHON=1`` forces the fallback.
"""

import os

from . import _ring_py

if os.environ.get("BLOWUP_PURE_PYTHON"):
    _impl = _ring_py
    BACKEND = "python"
else:
    try:
        from . import _ring as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        _impl = _ring_py
        BACKEND = "python"

ring_eval = _impl.ring_eval
ring_apply = _impl.ring_apply

__all__ = ["BACKEND", "ring_eval", "ring_apply"]
