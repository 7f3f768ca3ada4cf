"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
implementation.  Setting ``C2FVIT_KERNELS=python`` forces the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("C2FVIT_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels


def use_backend(name):
    """Switch kernels at runtime ("cython" or "python"); returns the previous name."""
    global _impl, BACKEND
    prev = BACKEND
    if name == "python":
        _impl, BACKEND = _pykernels, "python"
    elif name == "cython":
        from . import _ckernels

        _impl, BACKEND = _ckernels, "cython"
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    return prev


def trilinear_forward(vol, idx):
    return _impl.trilinear_forward(vol, idx)


def trilinear_backward(vol, idx, gout, want_vol):
    return _impl.trilinear_backward(vol, idx, gout, want_vol)


def nearest_sample(labels, idx):
    return _impl.nearest_sample(labels, idx)
