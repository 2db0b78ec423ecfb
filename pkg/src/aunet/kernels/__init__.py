"""Backend selection for the convolution and pooling kernels.

The compiled extension is used when it imported cleanly; otherwise the
numpy implementation takes over. ``AUNET_FORCE_BACKEND=numpy`` or
``=native`` overrides the choice, and asking for a native build that is
not importable raises rather than silently falling back.

Both backends satisfy the same contracts and agree to floating point
roundoff; they are not bit-identical to each other because summation
orders differ, so reproducibility guarantees hold per backend.
"""

import importlib
import os

import numpy as np

from ..errors import StateError
from . import numpy_backend

_forced = os.environ.get("AUNET_FORCE_BACKEND", "").strip().lower()
if _forced not in ("", "native", "numpy"):
    raise StateError(f"AUNET_FORCE_BACKEND must be 'native' or 'numpy', got {_forced!r}")

_native = None
_native_error = None
if _forced != "numpy":
    try:
        _native = importlib.import_module("._native", __name__)
    except ImportError as exc:
        _native_error = exc
        if _forced == "native":
            raise StateError(f"native kernel backend requested but unavailable: {exc}")

BACKEND = "native" if _native is not None else "numpy"


def _as_c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


if BACKEND == "native":

    def patch_conv_forward(x, w):
        return _native.patch_conv_forward(_as_c(x), _as_c(w))

    def patch_conv_backward(x, w, gy, need_gx=True):
        return _native.patch_conv_backward(_as_c(x), _as_c(w), _as_c(gy), need_gx)

    def maxpool2_forward(x):
        return _native.maxpool2_forward(_as_c(x))

    def maxpool2_backward(arg, gy):
        return _native.maxpool2_backward(
            np.ascontiguousarray(arg, dtype=np.int8), _as_c(gy))

else:
    patch_conv_forward = numpy_backend.patch_conv_forward
    patch_conv_backward = numpy_backend.patch_conv_backward
    maxpool2_forward = numpy_backend.maxpool2_forward
    maxpool2_backward = numpy_backend.maxpool2_backward


def conv2d_forward(x, w):
    """Plain same-padding convolution: the g = 1 patch bank."""
    return patch_conv_forward(x, w[None, None])


def conv2d_backward(x, w, gy, need_gx=True):
    gx, gw = patch_conv_backward(x, w[None, None], gy, need_gx)
    return gx, gw[0, 0]
