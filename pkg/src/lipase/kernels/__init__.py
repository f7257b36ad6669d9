"""Hot inner loops, compiled when available.

The Cython module ``_ckernels`` is used if it was built; otherwise the numpy
versions in ``_fallback`` are used. Set ``LIPASE_PURE_PYTHON=1`` to force the
fallback. ``BACKEND`` names the active implementation.
"""

import os

from . import _fallback

if os.environ.get("LIPASE_PURE_PYTHON"):
    _impl = _fallback
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _fallback

BACKEND = "cython" if _impl is not _fallback else "numpy"

cfar_noise = _impl.cfar_noise
caf_cells = _impl.caf_cells
lerp_uniform = _impl.lerp_uniform

__all__ = ["BACKEND", "cfar_noise", "caf_cells", "lerp_uniform"]
