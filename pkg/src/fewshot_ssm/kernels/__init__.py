"""Hot kernels: the diagonal linear-recurrence scan and the DTW dynamic program.

The compiled extension is used when importable; otherwise the numpy reference
implementation is selected.  Set ``FEWSHOT_SSM_PURE=1`` to force the fallback.
"""

import os

import numpy as np

from . import _reference

BACKEND = "python"
_impl = _reference

if os.environ.get("FEWSHOT_SSM_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels
    except ImportError:  # extension not built
        pass
    else:
        _impl = _ckernels
        BACKEND = "cython"


def _c(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def scan_forward(a, u):
    return _impl.scan_forward(_c(a), _c(u))


def scan_backward(a, h, grad_h):
    return _impl.scan_backward(_c(a), _c(h), _c(grad_h))


def dtw_path_cost(cost):
    return _impl.dtw_path_cost(_c(cost))


def backends():
    """Map backend name to kernel module for every backend importable here."""
    out = {"python": _reference}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        out["cython"] = _ckernels
    return out


def ssm_forward(x, a, bb, c):
    return _impl.ssm_forward(_c(x), _c(a), _c(bb), _c(c))


def ssm_backward(x, a, bb, c, h, grad_y):
    return _impl.ssm_backward(_c(x), _c(a), _c(bb), _c(c), _c(h), _c(grad_y))
