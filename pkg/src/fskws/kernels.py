"""Convolution gather/scatter kernels.

The compiled extension is used when it was built; otherwise, or when
``FSKWS_KERNELS=python`` is set, the numpy implementation is used.
Both produce bit-identical results.
"""
import os

from . import _pykernels

BACKEND = "python"
if os.environ.get("FSKWS_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
else:
    _impl = _pykernels

im2col = _impl.im2col
col2im = _impl.col2im
