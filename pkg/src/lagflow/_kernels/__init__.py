"""Interpolation kernel backends.

Two interchangeable implementations of the periodic bicubic spline
kernels: a compiled Cython extension and a vectorized numpy fallback.
The backend is selected once at import time; set LAGFLOW_KERNEL to
"compiled" or "python" to force a choice ("auto" or unset tries the
compiled module first).  benchmarks/bench_kernels.py compares the two.
"""

import os

from ._common import bspline_coeffs, refined_bspline_coeffs

__all__ = [
    "BACKEND",
    "available_backends",
    "bspline_coeffs",
    "refined_bspline_coeffs",
    "bspline_eval",
    "bspline_eval_grad",
    "invert_displacement",
    "set_backend",
]


def _load(name):
    if name == "compiled":
        from . import _bicubic as impl
    else:
        from . import _pykernels as impl
    return impl


def _select():
    choice = os.environ.get("LAGFLOW_KERNEL", "auto").strip().lower()
    if choice in ("", "auto"):
        try:
            return "compiled", _load("compiled")
        except ImportError:
            return "python", _load("python")
    if choice not in ("compiled", "python"):
        raise ValueError(f"LAGFLOW_KERNEL must be auto, compiled or python, got {choice!r}")
    return choice, _load(choice)


BACKEND, _impl = _select()


def available_backends():
    names = ["python"]
    try:
        _load("compiled")
        names.insert(0, "compiled")
    except ImportError:
        pass
    return tuple(names)


def set_backend(name: str) -> str:
    """Swap the active backend; returns the previous one.

    Intended for tests and benchmarks, not for use mid-computation.
    """
    global BACKEND, _impl
    previous = BACKEND
    BACKEND, _impl = name, _load(name)
    return previous


def bspline_eval(coef, h, x, y):
    return _impl.bspline_eval(coef, h, x, y)


def bspline_eval_grad(coef, h, x, y):
    return _impl.bspline_eval_grad(coef, h, x, y)


def invert_displacement(c1, c2, h, px, py, tol, maxiter):
    return _impl.invert_displacement(c1, c2, h, px, py, tol, maxiter)
