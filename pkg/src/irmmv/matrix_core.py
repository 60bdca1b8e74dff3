"""Small dense linear-algebra layer on top of numpy.

Matrices are plain 2-D float64 ``numpy.ndarray`` objects.  ``as_matrix``
is the single entry point that validates shape and finiteness; every
operation here calls it on its inputs and checks its output.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .errors import (
    DegenerateColumnError,
    DimensionError,
    NonFiniteError,
    SingularSystemError,
)

DenseMatrix = np.ndarray


def as_matrix(data, name: str = "matrix") -> DenseMatrix:
    """Return ``data`` as a C-contiguous finite float64 2-D array.

    1-D input is treated as a column.  Empty dimensions, NaN and Inf are
    rejected.
    """
    m = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got ndim={m.ndim}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise DimensionError(f"{name} has an empty dimension {m.shape}")
    _check_finite(m, name)
    return m


def _check_finite(m: np.ndarray, name: str) -> np.ndarray:
    if not np.isfinite(m).all():
        raise NonFiniteError(f"{name} contains non-finite entries")
    return m


def matmul(a, b) -> DenseMatrix:
    """Matrix product ``a @ b``."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a @ b
    return _check_finite(out, "product")


def transpose(a) -> DenseMatrix:
    return np.ascontiguousarray(as_matrix(a).T)


def frobenius_norm(m) -> float:
    """Square root of the sum of squared entries."""
    m = as_matrix(m)
    return float(np.linalg.norm(m))


def hadamard(a, b) -> DenseMatrix:
    """Entrywise product of two equally shaped matrices."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape != b.shape:
        raise DimensionError(f"hadamard needs equal shapes, got {a.shape} and {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a * b
    return _check_finite(out, "hadamard product")


def hadamard_square(a) -> DenseMatrix:
    a = as_matrix(a)
    return _check_finite(a * a, "hadamard square")


def column_norms(m) -> np.ndarray:
    return np.linalg.norm(as_matrix(m), axis=0)


def row_norms(m) -> np.ndarray:
    return np.linalg.norm(as_matrix(m), axis=1)


def normalize_columns(m) -> DenseMatrix:
    """Scale each column to unit Euclidean norm.

    Raises
    ------
    DegenerateColumnError
        If any column is identically zero.
    """
    m = as_matrix(m)
    norms = np.linalg.norm(m, axis=0)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise DegenerateColumnError(f"zero column(s) at index {bad.tolist()}")
    return m / norms


def ridge_solve(a, y, lam: float = 0.0) -> DenseMatrix:
    """Solve ``min_X ||y - a X||_F^2 + lam ||X||_F^2``.

    For ``lam > 0`` the normal equations ``(a^T a + lam I) X = a^T y`` are
    solved with a Cholesky factorization.  For ``lam == 0`` a pivoted QR
    factorization is used and rank deficiency is reported.

    Parameters
    ----------
    a : array_like, shape (M, N)
    y : array_like, shape (M, L)
    lam : float
        Non-negative Tikhonov weight.

    Raises
    ------
    SingularSystemError
        ``lam == 0`` and ``a`` does not have full column rank.
    """
    a = as_matrix(a, "a")
    y = as_matrix(y, "y")
    if a.shape[0] != y.shape[0]:
        raise DimensionError(f"row mismatch: a is {a.shape}, y is {y.shape}")
    lam = float(lam)
    if not lam >= 0.0:
        raise ValueError("lam must be non-negative")
    m, n = a.shape
    if lam > 0.0:
        gram = a.T @ a
        gram[np.diag_indices_from(gram)] += lam
        try:
            factor = sla.cho_factor(gram, lower=False, check_finite=False)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - SPD by construction
            raise SingularSystemError(str(exc)) from exc
        x = sla.cho_solve(factor, a.T @ y, check_finite=False)
        return _check_finite(x, "ridge solution")
    if m < n:
        raise SingularSystemError(f"underdetermined system {a.shape} has no unique solution")
    q, r, piv = sla.qr(a, mode="economic", pivoting=True, check_finite=False)
    diag = np.abs(np.diag(r))
    tol = max(m, n) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    if diag.size == 0 or diag[-1] <= tol:
        raise SingularSystemError("matrix is rank deficient")
    z = sla.solve_triangular(r, q.T @ y, lower=False, check_finite=False)
    x = np.empty_like(z)
    x[piv] = z
    return _check_finite(x, "least-squares solution")
