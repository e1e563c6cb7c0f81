"""Hot-loop kernels behind the layer operations, with two interchangeable
backends: a compiled Cython core and a pure-NumPy fallback.

Selection happens at import time: the compiled core is preferred when the
extension was built, otherwise the NumPy backend is used. Override with
the environment variable ``TAGNETS_KERNELS`` in {auto, compiled, numpy}
or at runtime via :func:`use_backend`. ``python -m tagnets.kernels.bench``
compares the two on the architectures' real layer shapes.
"""

from __future__ import annotations

import os

from . import numpy_backend

try:
    from . import _fastcore
except ImportError:
    _fastcore = None

_impl = None


def available_backends() -> tuple:
    return ("numpy", "compiled") if _fastcore is not None else ("numpy",)


def use_backend(name: str):
    """Select the kernel backend; returns the backend module."""
    global _impl
    if name in ("auto", None, ""):
        _impl = _fastcore if _fastcore is not None else numpy_backend
    elif name == "numpy":
        _impl = numpy_backend
    elif name == "compiled":
        if _fastcore is None:
            raise RuntimeError(
                "compiled kernel backend requested but the extension is not "
                "built; run 'python setup.py build_ext --inplace'"
            )
        _impl = _fastcore
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    return _impl


def active_backend() -> str:
    return _impl.NAME


use_backend(os.environ.get("TAGNETS_KERNELS", "auto"))


def conv2d_forward(x, w, b, pads):
    return _impl.conv2d_forward(x, w, b, pads)


def conv2d_backward(x, w, dy, pads, need_dx=True, need_dw=True):
    return _impl.conv2d_backward(x, w, dy, pads, need_dx, need_dw)


def maxpool2d_forward(x, pf, pt, ceil_mode):
    return _impl.maxpool2d_forward(x, pf, pt, ceil_mode)


def maxpool2d_backward(dy, idx, f, t):
    return _impl.maxpool2d_backward(dy, idx, f, t)
