"""Backend selection for the convolution kernels.

The compiled extension is used when it imports; otherwise, or when
``EEND_LAB_PURE_PYTHON=1`` is set, the numpy fallback is used.
"""

import os

import numpy as np

from eend_lab.numerics import _fallback

_compiled = None
if os.environ.get("EEND_LAB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from eend_lab.numerics import _kernels as _compiled
    except ImportError:
        _compiled = None

_impl = _compiled if _compiled is not None else _fallback
BACKEND = "compiled" if _compiled is not None else "python"


def available_backends():
    return ["compiled", "python"] if _compiled is not None else ["python"]


def get(name=None):
    """Kernel module by backend name; ``None`` means the selected default."""
    if name is None:
        return _impl
    if name == "python":
        return _fallback
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


def set_backend(name):
    """Switch the process-wide backend; returns the previous backend name."""
    global _impl, BACKEND
    previous = BACKEND
    _impl = get(name)
    BACKEND = name
    return previous


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def dwconv1d_forward(x, w, left):
    return _impl.dwconv1d_forward(_c(x), _c(w), int(left))


def dwconv1d_backward(dy, x, w, left):
    return _impl.dwconv1d_backward(_c(dy), _c(x), _c(w), int(left))


def dwconv2d_forward(xp, w, st, sf, n_t, n_f):
    return _impl.dwconv2d_forward(_c(xp), _c(w), int(st), int(sf), int(n_t), int(n_f))


def dwconv2d_backward(dy, xp, w, st, sf):
    return _impl.dwconv2d_backward(_c(dy), _c(xp), _c(w), int(st), int(sf))
