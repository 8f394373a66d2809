"""Kernel backend selection.

The compiled Cython core is used when available; ``STYLECRAFT_BACKEND``
forces a choice (``compiled`` | ``python`` | ``auto``). Both backends expose
the same functions and agree numerically; see benchmarks/bench_kernels.py
for the speed comparison.
"""

import os

from . import fallback

_NAMES = ("softmax_fwd", "softmax_bwd", "layernorm_fwd", "layernorm_bwd",
          "bilinear_warp", "im2col", "col2im")

_requested = os.environ.get("STYLECRAFT_BACKEND", "auto").lower()

_compiled = None
if _requested in ("auto", "compiled"):
    try:
        from . import accel as _compiled
    except ImportError:
        if _requested == "compiled":
            raise ImportError(
                "STYLECRAFT_BACKEND=compiled but stylecraft.kernels._core is not "
                "built; install with `pip install -e . --no-build-isolation`"
            )

if _compiled is not None:
    BACKEND = "compiled"
    _impl = _compiled
else:
    BACKEND = "python"
    _impl = fallback

softmax_fwd = _impl.softmax_fwd
softmax_bwd = _impl.softmax_bwd
layernorm_fwd = _impl.layernorm_fwd
layernorm_bwd = _impl.layernorm_bwd
bilinear_warp = _impl.bilinear_warp
im2col = _impl.im2col
col2im = _impl.col2im

__all__ = ["BACKEND", "fallback", *_NAMES]
