"""Hot-loop kernels with a compiled backend and a numpy fallback.

The Cython extension ``_ckernels`` is used when it was built; otherwise (or
when ``FORGEBENCH_PURE_PYTHON=1`` is set) the numpy twins in ``_pykernels``
are used.  ``BACKEND`` names the active one.
"""
import os

from . import _pykernels as python_backend

compiled_backend = None
if not os.environ.get("FORGEBENCH_PURE_PYTHON"):
    try:
        from . import _ckernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

_impl = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "compiled" if compiled_backend is not None else "python"

conv_out_size = python_backend.conv_out_size
im2col = _impl.im2col
col2im = _impl.col2im
maxpool2 = _impl.maxpool2
maxpool2_backward = _impl.maxpool2_backward
zs_candidates = _impl.zs_candidates
stamp_segment = _impl.stamp_segment

__all__ = [
    "BACKEND",
    "compiled_backend",
    "python_backend",
    "conv_out_size",
    "im2col",
    "col2im",
    "maxpool2",
    "maxpool2_backward",
    "zs_candidates",
    "stamp_segment",
]
