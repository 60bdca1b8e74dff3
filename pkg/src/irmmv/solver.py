"""Hadamard-factorized gradient descent for row-sparse MMV recovery.

The estimate is parameterized as ``X = (g**2)[:, None] * V`` with a
per-row scale ``g`` and a component matrix ``V``.  Plain gradient descent
on ``||Y - A X||_F^2`` from a small, row-balanced constant start drives
the rows off the support towards zero without any explicit penalty.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .errors import DimensionError, DivergenceError, NonFiniteError
from .matrix_core import DenseMatrix, as_matrix

SEQUENTIAL = "sequential"
SIMULTANEOUS = "simultaneous"


@dataclass
class FactorPair:
    """Overparameterized state ``(g, V)``."""

    g: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.g = np.array(self.g, dtype=np.float64).reshape(-1)
        self.v = np.array(self.v, dtype=np.float64, ndmin=2)
        if self.v.ndim != 2 or self.g.shape[0] != self.v.shape[0]:
            raise DimensionError(f"g has length {self.g.shape[0]} but V is {self.v.shape}")
        if not (np.isfinite(self.g).all() and np.isfinite(self.v).all()):
            raise NonFiniteError("factor entries must be finite")

    @property
    def shape(self):
        return self.v.shape

    def copy(self) -> "FactorPair":
        return FactorPair(self.g.copy(), self.v.copy())


@dataclass
class RecoveryConfig:
    """Step sizes, initialization scales and stopping rules.

    ``alpha_v=None`` selects the row-balanced value ``alpha_g / sqrt(2L)``
    once ``L`` is known.  ``record_every=None`` picks a cadence that keeps
    at most about ``10**4`` samples.
    """

    alpha_g: float = 1e-4
    alpha_v: Optional[float] = None
    eta_g: float = 1e-2
    eta_v: float = 1e-2
    max_iters: int = 5_000_000
    record_every: Optional[int] = None
    loss_tol: float = 1e-12
    rel_change_tol: float = 1e-14
    update_order: str = SEQUENTIAL
    check_every: int = 100

    def __post_init__(self):
        for name in ("alpha_g", "eta_g", "eta_v"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.alpha_v is not None and not self.alpha_v > 0:
            raise ValueError("alpha_v must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if self.record_every is not None and self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.loss_tol < 0 or self.rel_change_tol < 0:
            raise ValueError("tolerances must be non-negative")
        if self.update_order not in (SEQUENTIAL, SIMULTANEOUS):
            raise ValueError(f"unknown update_order {self.update_order!r}")
        if self.check_every < 1:
            raise ValueError("check_every must be >= 1")

    def resolved(self, l: int) -> "RecoveryConfig":
        """Copy with ``alpha_v`` and ``record_every`` filled in."""
        alpha_v = self.alpha_v if self.alpha_v is not None else balanced_alpha_v(self.alpha_g, l)
        record = self.record_every or max(1, math.ceil(self.max_iters / 10_000))
        return replace(self, alpha_v=alpha_v, record_every=record)


def balanced_alpha_v(alpha_g: float, l: int) -> float:
    """Scale of ``V`` that makes every row exactly balanced at start."""
    return alpha_g / math.sqrt(2 * l)


@dataclass
class TrajectoryRecord:
    """Sampled history of a run.

    Every per-row field is a list of length-N arrays aligned with
    ``times``.  ``factors`` is filled only when requested.
    """

    times: List[int] = field(default_factory=list)
    row_norms: List[np.ndarray] = field(default_factory=list)
    half_g_sq: List[np.ndarray] = field(default_factory=list)
    v_row_sq: List[np.ndarray] = field(default_factory=list)
    loss: List[float] = field(default_factory=list)
    residual_corr: List[np.ndarray] = field(default_factory=list)
    factors: List[FactorPair] = field(default_factory=list)
    iterations: int = 0
    stop_reason: str = ""
    final: Optional[FactorPair] = None

    def __len__(self):
        return len(self.times)

    def append(self, t: int, fp: FactorPair, lam: np.ndarray, loss_value: float, keep: bool):
        if self.times and t <= self.times[-1]:
            return
        x = reconstruct(fp)
        norms = np.linalg.norm(x, axis=1)
        self.times.append(int(t))
        self.row_norms.append(norms)
        self.half_g_sq.append(0.5 * fp.g * fp.g)
        self.v_row_sq.append(np.einsum("ij,ij->i", fp.v, fp.v))
        self.loss.append(float(loss_value))
        self.residual_corr.append(residual_correlation(lam, x))
        if keep:
            self.factors.append(fp.copy())

    def as_arrays(self):
        """Dict of stacked numpy arrays (samples along axis 0)."""
        return {
            "times": np.asarray(self.times),
            "row_norms": np.vstack(self.row_norms),
            "half_g_sq": np.vstack(self.half_g_sq),
            "v_row_sq": np.vstack(self.v_row_sq),
            "loss": np.asarray(self.loss),
            "residual_corr": np.vstack(self.residual_corr),
        }

    def to_csv(self, path) -> None:
        write_trajectory_csv(self, path)


TRAJECTORY_HEADER = ["iter", "loss", "row", "half_g_sq", "v_row_sq", "row_norm", "residual_corr"]


def write_trajectory_csv(traj: TrajectoryRecord, path) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        for k, t in enumerate(traj.times):
            for i in range(traj.row_norms[k].shape[0]):
                w.writerow([
                    t,
                    repr(traj.loss[k]),
                    i,
                    repr(float(traj.half_g_sq[k][i])),
                    repr(float(traj.v_row_sq[k][i])),
                    repr(float(traj.row_norms[k][i])),
                    repr(float(traj.residual_corr[k][i])),
                ])


def init_factors(n: int, l: int, cfg: Optional[RecoveryConfig] = None) -> FactorPair:
    """Constant start ``g = alpha_g``, ``V = alpha_v``."""
    cfg = (cfg or RecoveryConfig()).resolved(l)
    return FactorPair(np.full(n, cfg.alpha_g), np.full((n, l), cfg.alpha_v))


def reconstruct(fp: FactorPair) -> DenseMatrix:
    """``X_ij = g_i**2 * V_ij``."""
    return (fp.g * fp.g)[:, None] * fp.v


def _check_shapes(fp: FactorPair, a: np.ndarray, y: np.ndarray) -> None:
    if a.shape[1] != fp.v.shape[0] or a.shape[0] != y.shape[0] or y.shape[1] != fp.v.shape[1]:
        raise DimensionError(f"A {a.shape}, Y {y.shape} and V {fp.v.shape} are incompatible")


def loss(fp: FactorPair, a, y) -> float:
    """Squared Frobenius residual ``||Y - A X||_F^2``."""
    a = as_matrix(a, "a")
    y = as_matrix(y, "y")
    _check_shapes(fp, a, y)
    r = y - a @ reconstruct(fp)
    return float(np.vdot(r, r))


def residual_lambda(a, y, x) -> DenseMatrix:
    """``A^T (Y - A X)``."""
    a = as_matrix(a, "a")
    y = as_matrix(y, "y")
    x = as_matrix(x, "x")
    if a.shape[1] != x.shape[0] or a.shape[0] != y.shape[0] or y.shape[1] != x.shape[1]:
        raise DimensionError(f"A {a.shape}, Y {y.shape} and X {x.shape} are incompatible")
    return a.T @ (y - a @ x)


def residual_correlation(lam: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Row-wise ``<lambda_i, x_i / ||x_i||>``, zero for zero rows."""
    norms = np.linalg.norm(x, axis=1)
    dots = np.einsum("ij,ij->i", lam, x)
    out = np.zeros_like(norms)
    nz = norms > 0
    out[nz] = dots[nz] / norms[nz]
    return out


def gradients(fp: FactorPair, a, y):
    """Analytic gradients of the loss.

    Returns
    -------
    grad_g : ndarray, shape (N,)
        ``-4 g * sum_j Lambda_ij V_ij``
    grad_v : ndarray, shape (N, L)
        ``-2 g_i**2 Lambda_ij``
    """
    a = as_matrix(a, "a")
    y = as_matrix(y, "y")
    _check_shapes(fp, a, y)
    lam = residual_lambda(a, y, reconstruct(fp))
    grad_g = -4.0 * fp.g * np.einsum("ij,ij->i", lam, fp.v)
    grad_v = -2.0 * (fp.g * fp.g)[:, None] * lam
    return grad_g, grad_v


class LeastSquaresOperator:
    """Caches ``A^T A`` and ``A^T Y`` so each step costs one N x N x L product."""

    def __init__(self, a, y):
        self.a = as_matrix(a, "a")
        self.y = as_matrix(y, "y")
        if self.a.shape[0] != self.y.shape[0]:
            raise DimensionError(f"A {self.a.shape} and Y {self.y.shape} are incompatible")
        self.gram = self.a.T @ self.a
        self.aty = self.a.T @ self.y

    def lam(self, x: np.ndarray) -> np.ndarray:
        return self.aty - self.gram @ x

    def loss(self, x: np.ndarray) -> float:
        r = self.y - self.a @ x
        return float(np.vdot(r, r))


def descent_step(g, v, lam, eta_g, eta_v, order=SEQUENTIAL):
    """One update of ``(g, V)`` given ``Lambda`` evaluated at the current point.

    ``sequential`` scales the V step with the already updated ``g``;
    ``simultaneous`` uses the current ``g`` for both (forward Euler on the
    gradient flow).
    """
    g_new = g + 4.0 * eta_g * g * np.einsum("ij,ij->i", lam, v)
    gs = g_new if order == SEQUENTIAL else g
    v_new = v + 2.0 * eta_v * (gs * gs)[:, None] * lam
    return g_new, v_new


def recover(
    a,
    y,
    cfg: Optional[RecoveryConfig] = None,
    *,
    init: Optional[FactorPair] = None,
    keep_factors: bool = False,
):
    """Run the factorized gradient descent.

    Parameters
    ----------
    a : array_like, shape (M, N)
    y : array_like, shape (M, L)
    cfg : RecoveryConfig, optional
    init : FactorPair, optional
        Overrides the constant initialization.
    keep_factors : bool
        Store ``(g, V)`` at every recorded sample.

    Returns
    -------
    x_hat : ndarray, shape (N, L)
    trajectory : TrajectoryRecord

    Raises
    ------
    DivergenceError
        On the first non-finite iterate.  ``last_finite`` holds the most
        recent checked finite ``FactorPair``.
    """
    op = LeastSquaresOperator(a, y)
    n, l = op.a.shape[1], op.y.shape[1]
    cfg = (cfg or RecoveryConfig()).resolved(l)
    fp = init.copy() if init is not None else init_factors(n, l, cfg)
    _check_shapes(fp, op.a, op.y)

    g, v = fp.g, fp.v
    traj = TrajectoryRecord()
    x = (g * g)[:, None] * v
    lam = op.lam(x)
    traj.append(0, FactorPair(g, v), lam, op.loss(x), keep_factors)
    safe = FactorPair(g.copy(), v.copy())
    with np.errstate(over="ignore", invalid="ignore"):
        t, g, v, x, lam, reason = _loop(op, cfg, g, v, x, lam, traj, safe, keep_factors)
    final = FactorPair(g, v)
    traj.append(t, final, lam, op.loss(x), keep_factors)
    traj.iterations = t
    traj.stop_reason = reason
    traj.final = final.copy()
    return x, traj


def _stalled(x, x_prev, tol):
    """Relative change of the iterate below ``tol`` with no row still growing.

    Small rows leaving a plateau barely move ``X`` as a whole, so a global
    test alone would stop in the middle of incremental learning.
    """
    ref = np.linalg.norm(x_prev)
    if not ref > 0 or not np.linalg.norm(x - x_prev) < tol * ref:
        return False
    now = np.linalg.norm(x, axis=1)
    before = np.linalg.norm(x_prev, axis=1)
    return not np.any(now > before * (1.0 + tol))


def _loop(op, cfg, g, v, x, lam, traj, safe, keep_factors):
    """Inner iteration of ``recover``; returns the final state and stop reason."""
    reason = "max_iters"
    t = 0
    while t < cfg.max_iters:
        x_prev = x
        g, v = descent_step(g, v, lam, cfg.eta_g, cfg.eta_v, cfg.update_order)
        t += 1
        x = (g * g)[:, None] * v
        lam = op.lam(x)
        checking = t % cfg.check_every == 0 or t == cfg.max_iters
        recording = t % cfg.record_every == 0
        if checking or recording:
            if not (np.isfinite(lam).all() and np.isfinite(g).all() and np.isfinite(v).all()):
                raise DivergenceError(
                    f"non-finite iterate at step {t}", iteration=t, last_finite=safe
                )
            loss_value = op.loss(x)
            if recording:
                traj.append(t, FactorPair(g, v), lam, loss_value, keep_factors)
            if checking:
                safe = FactorPair(g.copy(), v.copy())
                if loss_value < cfg.loss_tol:
                    reason = "loss_tol"
                    break
                if _stalled(x, x_prev, cfg.rel_change_tol):
                    reason = "stalled"
                    break
    return t, g, v, x, lam, reason
