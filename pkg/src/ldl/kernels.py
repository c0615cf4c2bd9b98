"""Backend selection for the per-sample SGD sweeps.

The compiled extension ``ldl._kernels`` is used when it imports; otherwise, or
when the environment variable ``LDL_PURE_PYTHON`` is set to a non-empty value,
the numpy fallback is used. The two backends agree to rounding error but are
not bit-identical, so a given run is reproducible only within one backend.
"""
from __future__ import annotations

import os

import numpy as np

from ldl import _kernels_py

try:
    if os.environ.get("LDL_PURE_PYTHON"):
        raise ImportError("pure-Python backend forced")
    from ldl import _kernels as _compiled
except ImportError:
    _compiled = None

BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

BACKEND = "cython" if _compiled is not None else "python"


def _check(W_list, X, T, order):
    for W in W_list:
        if W.dtype != np.float64 or not W.flags.c_contiguous or not W.flags.writeable:
            raise ValueError("weights must be writable C-contiguous float64 arrays")
    order = np.ascontiguousarray(order, dtype=np.intp)
    if order.size and (order.min() < 0 or order.max() >= X.shape[0]):
        raise IndexError("sample order out of range")
    X = np.ascontiguousarray(X, dtype=np.float64)
    T = np.ascontiguousarray(T, dtype=np.float64)
    return X, T, order


def sgd_single_sweep(W, X, T, order, lr, backend=None):
    """One SGD step per sample on ``||W x_s - T_s||^2``, visiting ``order``.

    ``X`` is (N, d) and ``T`` is (N, k); ``W`` (k, d) is updated in place.
    """
    X, T, order = _check([W], X, T, order)
    if W.shape[1] != X.shape[1] or W.shape[0] != T.shape[1] or X.shape[0] != T.shape[0]:
        raise ValueError(f"shape mismatch: W {W.shape}, X {X.shape}, T {T.shape}")
    BACKENDS[backend or BACKEND].sgd_single_sweep(W, X, T, order, float(lr))


def sgd_two_layer_sweep(W1, W2, X, T, order, lr, backend=None):
    """As :func:`sgd_single_sweep` for the two-layer net ``W2 @ W1``."""
    X, T, order = _check([W1, W2], X, T, order)
    if (W2.shape[1] != W1.shape[0] or W1.shape[1] != X.shape[1]
            or W2.shape[0] != T.shape[1] or X.shape[0] != T.shape[0]):
        raise ValueError(f"shape mismatch: W1 {W1.shape}, W2 {W2.shape}, X {X.shape}, T {T.shape}")
    BACKENDS[backend or BACKEND].sgd_two_layer_sweep(W1, W2, X, T, order, float(lr))
