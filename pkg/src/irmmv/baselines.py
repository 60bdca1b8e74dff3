"""Classical MMV solvers used as references: M-OMP, M-SP, M-FOCUSS."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .errors import DegenerateSolutionError, DimensionError, SparsityError
from .matrix_core import as_matrix, ridge_solve


@dataclass
class BaselineConfig:
    """Shared knobs.  ``lam=None`` means no regularization."""

    k: int = 3
    p: float = 0.8
    lam: Optional[float] = None
    max_iters: int = 200
    conv_tol: float = 1e-8
    prune_tol: float = 1e-10
    sp_max_iters: int = 50

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise ValueError("p must lie in (0, 1]")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.lam is not None and self.lam < 0:
            raise ValueError("lam must be non-negative")


def _inputs(a, y, cfg: BaselineConfig, need_k: bool = True):
    a = as_matrix(a, "a")
    y = as_matrix(y, "y")
    if a.shape[0] != y.shape[0]:
        raise DimensionError(f"A {a.shape} and Y {y.shape} are incompatible")
    if need_k and cfg.k > a.shape[1]:
        raise SparsityError(f"k={cfg.k} exceeds the number of columns {a.shape[1]}")
    return a, y


def _top(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest scores; ties go to the lower index."""
    return np.sort(np.argsort(-scores, kind="stable")[:k])


def _refit(a, y, support):
    """Least squares on the selected columns, embedded in a full-size X."""
    x = np.zeros((a.shape[1], y.shape[1]))
    x[support] = ridge_solve(a[:, support], y, 0.0)
    return x, y - a[:, support] @ x[support]


def somp_recover(a, y, cfg: BaselineConfig, history: Optional[List[float]] = None):
    """Simultaneous orthogonal matching pursuit.

    Each step adds the column whose correlations with the residual have the
    largest l2 norm, then refits all selected rows by least squares.

    Returns
    -------
    x_hat : ndarray, shape (N, L)
    support : ndarray of int, sorted
    """
    a, y = _inputs(a, y, cfg)
    r = y
    chosen: List[int] = []
    if history is not None:
        history.append(float(np.linalg.norm(r)))
    x = np.zeros((a.shape[1], y.shape[1]))
    for _ in range(cfg.k):
        score = np.linalg.norm(a.T @ r, axis=1)
        score[chosen] = -np.inf
        chosen.append(int(np.argmax(score)))
        x, r = _refit(a, y, np.array(chosen))
        if history is not None:
            history.append(float(np.linalg.norm(r)))
    return x, np.sort(np.array(chosen, dtype=int))


def msp_recover(a, y, cfg: BaselineConfig):
    """Simultaneous subspace pursuit.

    Starts from the ``k`` columns best correlated with ``Y``.  Each pass
    merges in the ``k`` columns best correlated with the residual, refits
    on the merged set, keeps the ``k`` strongest rows and refits again.
    Stops when the support repeats or the residual stops shrinking; the
    best support seen is returned.
    """
    a, y = _inputs(a, y, cfg)
    k = cfg.k
    support = _top(np.linalg.norm(a.T @ y, axis=1), k)
    x, r = _refit(a, y, support)
    res = np.linalg.norm(r)
    for _ in range(cfg.sp_max_iters):
        extra = _top(np.linalg.norm(a.T @ r, axis=1), k)
        merged = np.union1d(support, extra)
        wide, _ = _refit(a, y, merged)
        new_support = _top(np.linalg.norm(wide, axis=1), k)
        if np.array_equal(new_support, support):
            break
        x_new, r_new = _refit(a, y, new_support)
        res_new = np.linalg.norm(r_new)
        if res_new >= res:
            break
        support, x, r, res = new_support, x_new, r_new, res_new
    return x, support


def _focuss_solve(aw, y, lam):
    if lam > 0:
        return ridge_solve(aw, y, lam)
    return np.linalg.lstsq(aw, y, rcond=None)[0]


def focuss_objective(a, y, x, lam: float, p: float) -> float:
    """``||Y - A X||_F^2 + (2 lam / p) sum_i ||X_i||^p``.

    The reweighted update minimizes a quadratic majorizer of this
    function, so it never increases along the iterates.
    """
    r = y - a @ x
    return float(np.vdot(r, r) + (2.0 * lam / p) * np.sum(np.linalg.norm(x, axis=1) ** p))


def mfocuss_recover(a, y, cfg: BaselineConfig, history: Optional[List[np.ndarray]] = None):
    """Regularized M-FOCUSS.

    Repeats ``X = W (AW)^T ((AW)(AW)^T + lam I)^{-1} Y`` with
    ``W = diag(||X_i||^(1 - p/2))``, starting from ``W = I``.  The update is
    evaluated in the equivalent primal ridge form on the surviving columns
    (minimum-norm least squares when ``lam == 0``).  Rows whose norm drops
    below ``prune_tol`` are fixed at zero.

    Raises
    ------
    DegenerateSolutionError
        Every row was pruned while ``Y`` is nonzero.
    """
    a, y = _inputs(a, y, cfg, need_k=False)
    lam = float(cfg.lam or 0.0)
    n = a.shape[1]
    weights = np.ones(n)
    active = np.arange(n)
    x = np.zeros((n, y.shape[1]))
    for _ in range(cfg.max_iters):
        w = weights[active]
        q = _focuss_solve(a[:, active] * w, y, lam)
        x_new = np.zeros_like(x)
        x_new[active] = w[:, None] * q
        c = np.linalg.norm(x_new, axis=1)
        x_new[c < cfg.prune_tol] = 0.0
        if history is not None:
            history.append(x_new.copy())
        prev = np.linalg.norm(x)
        step = np.linalg.norm(x_new - x) / prev if prev > 0 else np.inf
        x = x_new
        active = np.flatnonzero(c >= cfg.prune_tol)
        if active.size == 0:
            if not y.any():
                return x
            raise DegenerateSolutionError("all rows pruned")
        if step < cfg.conv_tol:
            break
        weights = np.zeros(n)
        weights[active] = c[active] ** (1.0 - cfg.p / 2.0)
    return x
