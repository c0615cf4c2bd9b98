"""Dense matrix helpers, seeded Gaussian initialization and row orthonormalization.

Matrices are plain C-ordered ``float64`` numpy arrays. Randomness always flows
through an explicit :class:`numpy.random.Generator` backed by PCG64, so the
same seed and call sequence reproduce the same numbers on every platform.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "ShapeError",
    "RankDeficientError",
    "make_rng",
    "as_matrix",
    "matmul",
    "gaussian_matrix",
    "orthonormalize_rows",
    "frobenius_sq_distance",
    "add",
    "sub",
    "scale",
    "transpose",
    "copy",
]

#: Residual-to-original norm ratio below which a row counts as dependent.
RANK_TOL = 1e-10


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class RankDeficientError(ValueError):
    """Rows handed to :func:`orthonormalize_rows` are numerically dependent."""


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    """Return a PCG64 generator for ``seed``."""
    return np.random.Generator(np.random.PCG64(seed))


def as_matrix(a) -> np.ndarray:
    """Coerce ``a`` to a 2-D C-contiguous float64 array, rejecting non-finite entries."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains NaN or Inf")
    return m


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product ``a @ b``.

    Raises
    ------
    ShapeError
        If ``a.cols != b.rows``; the message names both shapes.
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def gaussian_matrix(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. ``N(0, 1/cols)`` entries, so ``W @ x`` keeps the scale of ``x``."""
    if rows < 1 or cols < 1:
        raise ValueError(f"rows and cols must be positive, got ({rows}, {cols})")
    return rng.standard_normal((rows, cols)) / np.sqrt(cols)


def orthonormalize_rows(a: np.ndarray) -> np.ndarray:
    """Orthonormalize the rows of ``a`` in order.

    Modified Gram-Schmidt with a second reorthogonalization pass per row, which
    keeps ``Q @ Q.T`` within ~1e-15 of the identity even for ill-conditioned
    inputs.

    Parameters
    ----------
    a : ndarray, shape (m, n)
        Rows to orthonormalize, ``m <= n``.

    Returns
    -------
    ndarray, shape (m, n)
        Rows are orthonormal and row ``i`` spans the same space as rows
        ``0..i`` of ``a``.

    Raises
    ------
    RankDeficientError
        If a row's residual norm drops below ``1e-10`` times its original norm.
    """
    q = np.array(a, dtype=np.float64, order="C", copy=True)
    if q.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {q.shape}")
    m, n = q.shape
    if m > n:
        raise ShapeError(f"cannot orthonormalize {m} rows in dimension {n}")
    if not np.all(np.isfinite(q)):
        raise ValueError("matrix contains NaN or Inf")
    _mgs_pass(q, np.linalg.norm(q, axis=1))
    _mgs_pass(q, np.ones(m))
    return q


def _mgs_pass(q: np.ndarray, ref_norms: np.ndarray) -> None:
    # Right-looking MGS: once row i is final, project it out of every later row.
    for i in range(q.shape[0]):
        v = q[i]
        norm = np.linalg.norm(v)
        if ref_norms[i] == 0.0 or norm < RANK_TOL * ref_norms[i]:
            raise RankDeficientError(f"row {i} is numerically dependent on rows 0..{i - 1}")
        v /= norm
        rest = q[i + 1 :]
        rest -= np.outer(rest @ v, v)


def frobenius_sq_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Sum of squared entrywise differences."""
    _same_shape(a, b)
    diff = np.asarray(a, dtype=np.float64) - b
    return float(np.sum(diff * diff))


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _same_shape(a, b)
    return a + b


def sub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _same_shape(a, b)
    return a - b


def scale(a: np.ndarray, s: float) -> np.ndarray:
    return a * float(s)


def transpose(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a.T)


def copy(a: np.ndarray) -> np.ndarray:
    return np.array(a, dtype=np.float64, order="C", copy=True)
