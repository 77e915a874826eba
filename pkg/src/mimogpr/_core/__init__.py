"""Numerical core for pairwise kernel assembly.

When the compiled extension was built, thin workloads (few rows against the
training set: the shape of every one-step forecast) go through its fused
single pass, which beats NumPy's broadcast-and-GEMM path by 2-3x there;
large square workloads stay on NumPy, where BLAS wins. Without the
extension everything runs on the NumPy fallback. Set MIMOGPR_FORCE_PY_CORE=1
to force the fallback (used by the backend benchmark and parity tests).
"""

import os

import numpy as np

from . import _kernels_py

if os.environ.get("MIMOGPR_FORCE_PY_CORE"):
    _compiled = None
else:
    try:
        from . import _kernels_cy as _compiled
    except ImportError:
        _compiled = None

BACKEND = "python" if _compiled is None else "cython"

# crossover measured at p ~ 12: the fused pass wins while one side is thin
_THIN_ROWS = 8


def sqdist_and_dot(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise squared distances and dot products, routed by workload shape."""
    if _compiled is not None and min(np.shape(a)[0], np.shape(b)[0]) <= _THIN_ROWS:
        return _compiled.sqdist_and_dot(a, b)
    return _kernels_py.sqdist_and_dot(a, b)


__all__ = ["BACKEND", "sqdist_and_dot"]
