"""Numerical checks of the factorized gradient-flow theory.

The flow is emulated with forward Euler and simultaneous updates.  Each
``verify_*`` function returns a ``CheckReport`` whose rows follow the CSV
layout ``check,row,time,lhs,rhs_lower,rhs_upper,violation``; a failed
inequality is recorded, never raised.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConstructionError, DivergenceError
from .matrix_core import as_matrix
from .problem_gen import ProblemInstance, make_instance
from .solver import (
    SIMULTANEOUS,
    FactorPair,
    LeastSquaresOperator,
    RecoveryConfig,
    TrajectoryRecord,
    descent_step,
    init_factors,
    reconstruct,
    residual_correlation,
)

RATE_CONSTANT = 6.0 * 2.0 ** (2.0 / 3.0)
REPORT_HEADER = ["check", "row", "time", "lhs", "rhs_lower", "rhs_upper", "violation"]


def toy_instance(seed: int = 2, snr_db=20.0) -> ProblemInstance:
    """Small default problem: M = N = 6, L = 3, K = 2."""
    return make_instance(6, 6, 3, 2, snr_db, seed)


# ---------------------------------------------------------------- reports

@dataclass
class CheckReport:
    """Outcome of one verification.

    Rows are held column-wise in numpy arrays; ``summary`` holds scalar
    diagnostics.
    """

    name: str
    summary: dict = field(default_factory=dict)

    def __post_init__(self):
        self.row = np.empty(0, dtype=np.int64)
        self.time = np.empty(0)
        self.lhs = np.empty(0)
        self.rhs_lower = np.empty(0)
        self.rhs_upper = np.empty(0)
        self.violation = np.empty(0, dtype=bool)

    def __len__(self):
        return self.row.size

    @property
    def violations(self) -> int:
        return int(self.violation.sum())

    @property
    def passed(self) -> bool:
        return self.violations == 0 and self.summary.get("conclusive", True)

    def extend(self, row, time, lhs, lo, hi, tol_lo=0.0, tol_hi=0.0):
        """Append rows; all arguments broadcast to a common 1-D shape."""
        row, time, lhs, lo, hi, tol_lo, tol_hi = (
            np.ravel(v) for v in np.broadcast_arrays(row, time, lhs, lo, hi, tol_lo, tol_hi)
        )
        bad = (lhs < lo - tol_lo) | (lhs > hi + tol_hi)
        self.row = np.concatenate([self.row, row.astype(np.int64)])
        self.time = np.concatenate([self.time, time.astype(float)])
        self.lhs = np.concatenate([self.lhs, lhs.astype(float)])
        self.rhs_lower = np.concatenate([self.rhs_lower, lo.astype(float)])
        self.rhs_upper = np.concatenate([self.rhs_upper, hi.astype(float)])
        self.violation = np.concatenate([self.violation, bad])


def write_report_csv(reports: Sequence[CheckReport], path) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for rep in reports:
            for j in range(len(rep)):
                w.writerow([rep.name, int(rep.row[j]), repr(float(rep.time[j])),
                            repr(float(rep.lhs[j])), repr(float(rep.rhs_lower[j])),
                            repr(float(rep.rhs_upper[j])), int(rep.violation[j])])


# ---------------------------------------------------------- balancedness

@dataclass
class UnbalancednessReport:
    epsilon: float
    epsilon_r: float
    per_row: np.ndarray


def per_row_balance(g: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``0.5 g_i^2 - sum_j V_ij^2`` along the last two axes."""
    return 0.5 * g * g - np.sum(v * v, axis=-1)


def unbalancedness(fp: FactorPair) -> UnbalancednessReport:
    per_row = per_row_balance(fp.g, fp.v)
    return UnbalancednessReport(float(abs(per_row.sum())), float(np.abs(per_row).max()), per_row)


# ------------------------------------------------------------ integration

def flow_step(fp: FactorPair, a, y, step: float) -> FactorPair:
    """One forward-Euler step of the gradient flow."""
    if not step > 0:
        raise ValueError("step must be positive")
    op = LeastSquaresOperator(a, y)
    lam = op.lam(reconstruct(fp))
    with np.errstate(over="ignore", invalid="ignore"):
        g, v = descent_step(fp.g, fp.v, lam, step, step, SIMULTANEOUS)
    if not (np.isfinite(g).all() and np.isfinite(v).all()):
        raise DivergenceError("flow step produced non-finite values", 1, fp.copy())
    return FactorPair(g, v)


@dataclass
class FlowRun:
    """Dense record of an Euler integration.

    ``g`` has shape (S, N) and ``v`` shape (S, N, L); sample ``k`` is the
    state after ``steps[k]`` Euler steps, at time ``times[k]``.
    """

    a: np.ndarray
    y: np.ndarray
    step: float
    steps: np.ndarray
    g: np.ndarray
    v: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.steps * self.step

    @property
    def x(self) -> np.ndarray:
        return (self.g * self.g)[:, :, None] * self.v

    def factors(self, k: int) -> FactorPair:
        return FactorPair(self.g[k], self.v[k])

    def row_norms(self) -> np.ndarray:
        return np.linalg.norm(self.x, axis=2)

    def lam(self) -> np.ndarray:
        """``A^T (Y - A X)`` at every sample, shape (S, N, L)."""
        return self.a.T @ (self.y[None] - self.a @ self.x)

    def residual_corr(self) -> np.ndarray:
        lam, x = self.lam(), self.x
        return np.stack([residual_correlation(lam[k], x[k]) for k in range(len(self.steps))])

    def to_trajectory(self) -> TrajectoryRecord:
        rec = TrajectoryRecord()
        lam = self.lam()
        for k, t in enumerate(self.steps):
            fp = self.factors(k)
            r = self.y - self.a @ reconstruct(fp)
            rec.append(int(t), fp, lam[k], float(np.vdot(r, r)), keep=True)
        rec.iterations = int(self.steps[-1])
        rec.final = self.factors(len(self.steps) - 1)
        return rec


def integrate_flow(
    fp: FactorPair,
    a,
    y,
    step: float,
    n_steps: int,
    record_every: int = 1,
    zero_rows: Optional[np.ndarray] = None,
) -> FlowRun:
    """Integrate ``n_steps`` Euler steps, storing every ``record_every``-th state.

    ``zero_rows`` lists rows that must stay exactly zero; they are checked
    after every step and a ``ConstructionError`` is raised otherwise.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    op = LeastSquaresOperator(a, y)
    n_rec = n_steps // record_every + 1
    if n_steps % record_every:
        n_rec += 1
    gs = np.empty((n_rec,) + fp.g.shape)
    vs = np.empty((n_rec,) + fp.v.shape)
    idx = np.empty(n_rec, dtype=np.int64)
    g, v = fp.g.copy(), fp.v.copy()
    gs[0], vs[0], idx[0] = g, v, 0
    k = 1
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(1, n_steps + 1):
            lam = op.lam((g * g)[:, None] * v)
            g, v = descent_step(g, v, lam, step, step, SIMULTANEOUS)
            if zero_rows is not None and (g[zero_rows].any() or v[zero_rows].any()):
                raise ConstructionError(f"a zero row became nonzero at step {t}")
            if t % record_every == 0 or t == n_steps:
                if not (np.isfinite(g).all() and np.isfinite(v).all()):
                    raise DivergenceError(f"non-finite state at step {t}", t,
                                          FactorPair(gs[k - 1], vs[k - 1]))
                gs[k], vs[k], idx[k] = g, v, t
                k += 1
    return FlowRun(op.a, op.y, float(step), idx[:k], gs[:k], vs[:k])


def central_difference(values: np.ndarray, times: np.ndarray):
    """Derivative at interior samples.

    Returns ``(k, d)`` where ``k`` are the interior sample indices and
    ``d[j]`` approximates the time derivative at sample ``k[j]``.
    """
    k = np.arange(1, len(times) - 1)
    d = (values[2:] - values[:-2]) / (times[2:] - times[:-2])[:, None]
    return k, d


# ---------------------------------------------------------------- checks

def verify_balancedness(run: FlowRun, tol: float = 1e-6) -> CheckReport:
    """Drift of the per-row and global conserved quantities from time 0.

    Global entries use ``row = -1``.
    """
    rep = CheckReport("balancedness")
    q = per_row_balance(run.g, run.v)
    row_drift = np.abs(q - q[0])
    glob_drift = np.abs(q.sum(axis=1) - q[0].sum())
    n = q.shape[1]
    t = run.times[:, None]
    rep.extend(np.arange(n)[None, :], t, row_drift, 0.0, tol)
    rep.extend(-1, run.times, glob_drift, 0.0, tol)
    rep.summary.update(
        max_row_drift=float(row_drift.max()),
        max_global_drift=float(glob_drift.max()),
        initial_per_row=q[0].copy(),
    )
    return rep


def remark_identity(run: FlowRun) -> CheckReport:
    """``|epsilon - N epsilon_r|`` at every sample."""
    rep = CheckReport("remark_eps")
    q = per_row_balance(run.g, run.v)
    n = q.shape[1]
    gaps = np.abs(np.abs(q.sum(axis=1)) - n * np.abs(q).max(axis=1))
    rep.extend(-1, run.times, gaps, 0.0, np.inf)
    rep.summary.update(gap_at_zero=float(gaps[0]), max_gap=float(gaps.max()))
    return rep


def _row_quantities(run: FlowRun):
    norms = run.row_norms()
    k, d = central_difference(norms, run.times)
    corr = run.residual_corr()[k]
    r = norms[k]
    active = (run.g[k] ** 2 > 0) & (np.sum(run.v[k] ** 2, axis=2) > 0)
    return k, d, r, corr, active


def row_norm_bounds(corr, r, eps):
    """Lower and upper bounds on the row-norm derivative."""
    r23 = np.cbrt(r) ** 2
    den = eps + r23
    b1 = np.divide(6.0 * corr * r * r, den, out=np.zeros(np.broadcast(corr, r).shape), where=den > 0)
    b2 = 24.0 * corr * (eps + r23) ** 2
    return np.minimum(b1, b2), np.maximum(b1, b2)


def verify_row_norm_bounds(run: FlowRun, eps: Optional[float] = None, tol: float = 1e-6) -> CheckReport:
    """Two-sided bounds on the row-norm speed at every interior sample.

    ``eps`` defaults to the global unbalancedness at time 0.  The slack is
    ``tol * (1 + |bound|)``.  Inactive rows (``g_i = 0`` or ``V_i = 0``)
    must have zero derivative.
    """
    if eps is None:
        eps = unbalancedness(run.factors(0)).epsilon
    rep = CheckReport("row_norm_bounds")
    k, d, r, corr, active = _row_quantities(run)
    lo, hi = row_norm_bounds(corr, r, eps)
    lo = np.where(active, lo, 0.0)
    hi = np.where(active, hi, 0.0)
    rows = np.arange(r.shape[1])[None, :]
    rep.extend(rows, run.times[k][:, None], d, lo, hi,
               tol * (1 + np.abs(lo)), tol * (1 + np.abs(hi)))
    rep.summary.update(eps=float(eps), samples=int(len(k)))
    return rep


def rate_law_residuals(run: FlowRun):
    """Residual between measured row speed and the balanced rate law.

    Returns ``(times, residual, rhs, active)`` arrays over interior samples.
    """
    k, d, r, corr, active = _row_quantities(run)
    rhs = RATE_CONSTANT * corr * np.cbrt(r) ** 4
    return run.times[k], np.abs(d - rhs), rhs, active


def verify_rate_law(run: FlowRun, tol: float = 1e-3) -> CheckReport:
    """Check ``|d/dt ||X_i|| - 6 * 2**(2/3) <lambda_i, x_i> ||X_i||**(4/3)|``."""
    rep = CheckReport("rate_law")
    times, res, rhs, active = rate_law_residuals(run)
    rel = res / (1.0 + np.abs(rhs))
    j, i = np.nonzero(active)
    rep.extend(i, times[j], res[j, i], 0.0, tol * (1 + np.abs(rhs[j, i])))
    rep.summary.update(
        max_residual=float(res[active].max()) if active.any() else 0.0,
        max_relative=float(rel[active].max()) if active.any() else 0.0,
    )
    return rep


def observed_order(coarse: float, fine: float, ratio: float = 2.0) -> float:
    """Convergence order from errors at steps ``h * ratio`` and ``h``."""
    return math.log(coarse / fine) / math.log(ratio)


# ------------------------------------------------------- theorem constants

@dataclass
class SmoothnessParams:
    b_g: float
    b_v: float
    b_y: float
    c: float
    mu: float
    m: int
    n: int
    l: int

    def __post_init__(self):
        if min(self.b_g, self.b_v, self.b_y, self.c) <= 0:
            raise ValueError("bounds must be positive")
        if self.c < max(1.0, self.b_g, 2.0 * self.b_v):
            raise ValueError("c must be at least max(1, b_g, 2 b_v)")
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError("mu must lie in [0, 1]")

    @classmethod
    def from_bounds(cls, b_g, b_v, b_y, mu, m, n, l):
        return cls(b_g, b_v, b_y, max(1.0, b_g, 2.0 * b_v), mu, m, n, l)


def beta_constant(p: SmoothnessParams) -> float:
    """Lipschitz constant of the loss gradient on the bounded domain."""
    return 16.0 * p.n * p.l ** 1.5 * ((p.n + 1) * p.mu * p.c ** 4 + p.m * p.b_y * p.c)


def d_tilde(n: int, l: int, d: float) -> float:
    """Parameter-space radius matching a matrix-space radius ``d``."""
    return n ** (1.0 / 3.0) * math.sqrt(2 * l + 1) * (d / 2.0 + 0.5) ** (1.0 / 3.0)


def theorem_init_bound_log(
    eps_app: float,
    beta: float,
    t_horizon: float,
    n: int,
    l: int,
    d: Optional[float] = None,
    *,
    dt: Optional[float] = None,
) -> float:
    """Natural log of the largest admissible ``alpha_v``.

    ``log eps_app - log(2 (Dt + 2)**2) - beta T - 0.5 log(2 L N (2L + 3))``
    where ``Dt = d_tilde(n, l, d)`` unless given directly as ``dt``.
    """
    if not 0.0 < eps_app <= 1.0:
        raise ValueError("eps_app must lie in (0, 1]")
    if dt is None:
        if d is None:
            raise ValueError("give d or dt")
        dt = d_tilde(n, l, d)
    return (
        math.log(eps_app)
        - math.log(2.0 * (dt + 2.0) ** 2)
        - beta * t_horizon
        - 0.5 * math.log(2.0 * l * n * (2 * l + 3))
    )


def rho_interval(alpha_v: float, beta: float, t_horizon: float, n: int, l: int):
    """Admissible interval for ``rho**(1/3)``, or ``None`` when empty.

    The lower end may be negative; callers clip at zero.
    """
    log_a = -2.0 * beta * t_horizon - math.log(2.0 * l * n)
    s = math.sqrt(2.0 * l) - 1.0
    if s == 0.0:
        log_b = -math.inf
    else:
        log_b = 2.0 * math.log(alpha_v) + 2.0 * math.log(s) - math.log(4.0)
    if log_b > log_a:
        return None
    eps_alpha = math.exp(0.5 * log_a) * math.sqrt(-math.expm1(log_b - log_a))
    lo = (math.sqrt(l / 2.0) + 0.5) * alpha_v - eps_alpha
    return lo, alpha_v


def default_rho(alpha_v: float, interval) -> float:
    """``min(alpha_v**3, hi**3)`` clipped into the interval."""
    lo, hi = interval
    rho = min(alpha_v ** 3, hi ** 3)
    return min(max(rho, max(lo, 0.0) ** 3), hi ** 3)


# --------------------------------------------------- reference trajectory

@dataclass
class ReferenceTrajectory:
    support: np.ndarray
    rho: float
    factors: FactorPair
    run: FlowRun


def reference_init(support, rho: float, v0) -> FactorPair:
    """Rank-K start: ``g = sqrt(2) rho^(1/3)`` and unit-direction rows of
    ``v0`` scaled to ``rho^(1/3)`` on the support, zero elsewhere."""
    v0 = as_matrix(v0, "v0")
    support = np.asarray(support, dtype=int)
    if not rho > 0:
        raise ValueError("rho must be positive")
    s = np.cbrt(rho)
    g = np.zeros(v0.shape[0])
    v = np.zeros_like(v0)
    norms = np.linalg.norm(v0[support], axis=1)
    if np.any(norms == 0):
        raise ValueError("v0 rows on the support must be nonzero")
    g[support] = math.sqrt(2.0) * s
    v[support] = s * v0[support] / norms[:, None]
    return FactorPair(g, v)


def build_reference_trajectory(support, rho, v0, a, y, step, n_steps, record_every=1,
                               alpha_v: Optional[float] = None) -> ReferenceTrajectory:
    """Integrate the flow from the rank-K start and enforce zero off-support rows."""
    if alpha_v is not None and rho > alpha_v ** 3 * (1 + 1e-12):
        raise ValueError("rho must not exceed alpha_v**3")
    fp = reference_init(support, rho, v0)
    off = np.setdiff1d(np.arange(fp.g.shape[0]), np.asarray(support, dtype=int))
    run = integrate_flow(fp, a, y, step, n_steps, record_every, zero_rows=off)
    return ReferenceTrajectory(np.asarray(support, dtype=int), float(rho), fp, run)


def lemma4_gap(est: FactorPair, ref: FactorPair) -> tuple:
    """``(bound, actual)`` for the parameter-to-matrix distance inequality.

    ``D`` is the larger Euclidean norm of the two ``(g, V)`` tuples.
    """
    d = max(math.sqrt(np.vdot(p.g, p.g) + np.vdot(p.v, p.v)) for p in (est, ref))
    l = est.v.shape[1]
    param = float(np.vdot(est.v - ref.v, est.v - ref.v) + l * np.vdot(est.g - ref.g, est.g - ref.g))
    diff = reconstruct(est) - reconstruct(ref)
    return 8.0 * d ** 4 * param, float(np.vdot(diff, diff))


def verify_trajectory_closeness(est: FlowRun, ref: ReferenceTrajectory, eps_app: float, d: float):
    """Distance between estimate and reference up to the exit time.

    Returns two reports: ``closeness`` (distance below ``eps_app`` while
    ``||X(t)||_F < d``) and ``lemma4`` (bound minus actual at every sample).
    """
    if not np.array_equal(est.steps, ref.run.steps) or est.step != ref.run.step:
        raise ValueError("trajectories must share step size and sampling")
    close = CheckReport("closeness")
    lem = CheckReport("lemma4")
    gaps = np.array([
        np.subtract(*lemma4_gap(est.factors(k), ref.run.factors(k))) for k in range(len(est.steps))
    ])
    lem.extend(-1, est.times, gaps, -1e-12, np.inf)
    x_est = est.x
    size = np.linalg.norm(x_est, axis=(1, 2))
    dist = np.linalg.norm(x_est - ref.run.x, axis=(1, 2))
    out = np.flatnonzero(size >= d)
    stop = int(out[0]) if out.size else len(est.steps)
    exit_time = float(est.times[stop]) if out.size else None
    # strict inequality: a distance equal to eps_app counts as a violation
    close.extend(-1, est.times[:stop], dist[:stop], 0.0, np.nextafter(eps_app, 0.0))
    close.summary.update(
        max_distance=float(dist[:stop].max()) if stop else 0.0,
        exit_time=exit_time,
        eps_app=eps_app,
    )
    lem.summary.update(min_gap=float(gaps.min()))
    return close, lem


def verify_corollary_convergence(est: FlowRun, ref: ReferenceTrajectory, x_star, eps_app: float) -> CheckReport:
    """After the reference first enters the ``eps_app`` ball around ``x_star``,
    the estimate must stay within ``2 eps_app`` of it."""
    x_star = as_matrix(x_star, "x_star")
    rep = CheckReport("corollary")
    ref_dist = np.linalg.norm(ref.run.x - x_star[None], axis=(1, 2))
    inside = np.flatnonzero(ref_dist <= eps_app)
    if inside.size == 0:
        rep.summary.update(conclusive=False, t_c=None)
        return rep
    k0 = int(inside[0])
    est_dist = np.linalg.norm(est.x - x_star[None], axis=(1, 2))
    rep.extend(-1, est.times[k0:], est_dist[k0:], 0.0, 2.0 * eps_app)
    rep.summary.update(conclusive=True, t_c=float(est.times[k0]),
                       max_after=float(est_dist[k0:].max()))
    return rep


def balanced_start(n: int, l: int, alpha_g: float) -> FactorPair:
    """Constant, exactly row-balanced start."""
    return init_factors(n, l, RecoveryConfig(alpha_g=alpha_g))
