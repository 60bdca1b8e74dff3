"""Experiment runner: synthetic sweeps, initialization study, incremental
learning trace and the MNIST run.  Results are written as CSV."""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .baselines import BaselineConfig, mfocuss_recover, msp_recover, somp_recover
from .errors import IrmmvError, UndefinedMetricError
from .matrix_core import as_matrix, ridge_solve
from .mnist import load_mnist_idx
from .problem_gen import (
    generate_sensing_matrix,
    is_noiseless,
    make_instance,
    noise_variance,
    parse_snr,
    synthesize_measurements,
)
from .solver import SIMULTANEOUS, RecoveryConfig, balanced_alpha_v, recover, write_trajectory_csv

KINDS = ("balancedness", "init_sweep", "error_vs_m", "error_vs_k", "single", "mnist")
SOLVERS = ("irmmv", "momp", "msp", "mfocuss", "lsq")
RESULT_HEADER = [
    "solver", "sweep_param", "sweep_value", "trial",
    "rel_error", "wall_time_s", "iters", "support_exact", "status",
]
SWEEP_PARAM = {
    "error_vs_m": "M",
    "error_vs_k": "K",
    "init_sweep": "alpha_g",
    "single": "none",
    "mnist": "image",
    "balancedness": "none",
}
DEFAULT_SWEEPS = {
    "error_vs_m": tuple(range(10, 55, 5)),
    "error_vs_k": tuple(range(1, 9)),
    "init_sweep": (1e-2, 1e-3, 1e-4),
}


def relative_error(x_true, x_hat) -> float:
    """Squared-norm ratio ``||X - Xhat||_F^2 / ||X||_F^2``."""
    x_true = as_matrix(x_true, "x_true")
    x_hat = as_matrix(x_hat, "x_hat")
    if x_true.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x_true.shape} vs {x_hat.shape}")
    ref = float(np.vdot(x_true, x_true))
    if ref == 0.0:
        raise UndefinedMetricError("reference matrix is zero")
    diff = x_true - x_hat
    return float(np.vdot(diff, diff)) / ref


@dataclass
class ExperimentSpec:
    """What to run.

    ``irmmv`` holds ``RecoveryConfig`` overrides.  With ``timing=False`` the
    wall-clock column is written as 0 so that repeated runs give identical
    files.
    """

    kind: str = "single"
    m: int = 50
    n: int = 25
    l: int = 100
    k: int = 3
    snr_db: object = 40.0
    trials: int = 20
    sweep_values: Tuple = ()
    solvers: Tuple[str, ...] = ("irmmv", "momp", "msp", "mfocuss")
    seed: int = 0
    output_path: Optional[str] = None
    irmmv: Dict[str, object] = field(default_factory=dict)
    focuss_p: float = 0.8
    timing: bool = True
    mnist_path: Optional[str] = None
    mnist_count: int = 500
    mnist_batch: int = 10
    mnist_m: int = 1024
    mnist_k: int = 18
    row_magnitudes: Tuple[float, ...] = (1.0, 2.0, 3.0)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")
        self.snr_db = parse_snr(self.snr_db)
        self.solvers = tuple(self.solvers)
        bad = set(self.solvers) - set(SOLVERS)
        if bad:
            raise ValueError(f"unknown solver(s) {sorted(bad)}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.sweep_values and self.kind in DEFAULT_SWEEPS:
            self.sweep_values = DEFAULT_SWEEPS[self.kind]
        self.sweep_values = tuple(self.sweep_values)
        if self.kind in DEFAULT_SWEEPS and not self.sweep_values:
            raise ValueError("sweep kinds need sweep values")

    def recovery_config(self, **extra) -> RecoveryConfig:
        return RecoveryConfig(**{**self.irmmv, **extra})


@dataclass
class TrialRecord:
    solver: str
    sweep_value: object
    trial: int
    rel_error: float
    wall_time_s: float
    iters: int
    support_exact: bool
    status: str = "ok"
    extra: Dict[str, float] = field(default_factory=dict)


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    records: List[TrialRecord] = field(default_factory=list)
    extra_columns: Tuple[str, ...] = ()
    flags: Dict[str, object] = field(default_factory=dict)

    def errors(self, solver: str, sweep_value=None) -> np.ndarray:
        return np.array([
            r.rel_error for r in self.records
            if r.solver == solver and (sweep_value is None or r.sweep_value == sweep_value)
        ])

    def aggregates(self) -> Dict[Tuple[str, object], Tuple[float, float]]:
        """Mean and population standard deviation of ``rel_error`` per
        (solver, sweep value), in first-appearance order."""
        groups: Dict[Tuple[str, object], List[float]] = {}
        for r in self.records:
            groups.setdefault((r.solver, r.sweep_value), []).append(r.rel_error)
        return {key: (float(np.mean(v)), float(np.std(v))) for key, v in groups.items()}

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RESULT_HEADER + list(self.extra_columns))
        param = SWEEP_PARAM[self.spec.kind]
        for r in self.records:
            row = [
                r.solver, param, _fmt(r.sweep_value), r.trial, repr(float(r.rel_error)),
                repr(float(r.wall_time_s)) if self.spec.timing else "0",
                r.iters, int(r.support_exact), r.status,
            ]
            row += [repr(float(r.extra.get(c, math.nan))) for c in self.extra_columns]
            w.writerow(row)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="ascii", newline="") as fh:
                fh.write(text)
        return text


def _fmt(v) -> str:
    if v is None or v == "":
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def top_rows(x: np.ndarray, k: int) -> np.ndarray:
    return np.sort(np.argsort(-np.linalg.norm(x, axis=1), kind="stable")[:k])


def _run_solver(name, a, y, k, spec: ExperimentSpec, lam: float, cfg_overrides=None):
    """Return ``(x_hat, iters, support_or_None, status, extra)``."""
    extra = {}
    if name == "irmmv":
        cfg = spec.recovery_config(**(cfg_overrides or {}))
        x, traj = recover(a, y, cfg)
        extra["final_loss"] = traj.loss[-1]
        return x, traj.iterations, None, "ok", extra
    bcfg = BaselineConfig(k=k, p=spec.focuss_p, lam=lam)
    if name == "momp":
        x, s = somp_recover(a, y, bcfg)
        return x, k, s, "ok", extra
    if name == "msp":
        x, s = msp_recover(a, y, bcfg)
        return x, 0, s, "ok", extra
    if name == "mfocuss":
        hist: list = []
        x = mfocuss_recover(a, y, bcfg, history=hist)
        return x, len(hist), None, "ok", extra
    if name == "lsq":
        return ridge_solve(a, y, 0.0), 1, None, "ok", extra
    raise ValueError(name)


def _timed_cell(name, a, y, x_true, support, k, spec, lam, sweep_value, trial, overrides=None):
    t0 = time.perf_counter()
    try:
        x, iters, sup, status, extra = _run_solver(name, a, y, k, spec, lam, overrides)
    except IrmmvError as exc:
        dt = time.perf_counter() - t0
        return TrialRecord(name, sweep_value, trial, math.nan, dt, getattr(exc, "iteration", -1),
                           False, f"error:{type(exc).__name__}")
    dt = time.perf_counter() - t0
    found = sup if sup is not None else top_rows(x, k)
    exact = bool(np.array_equal(np.sort(found), np.sort(support)))
    return TrialRecord(name, sweep_value, trial, relative_error(x_true, x), dt, int(iters), exact,
                       status, extra)


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    """Dispatch on ``spec.kind``; trial ``t`` uses instance seed ``spec.seed + t``."""
    if spec.kind == "init_sweep":
        return run_init_sweep(spec)
    if spec.kind == "mnist":
        return run_mnist(spec)
    if spec.kind == "balancedness":
        return run_balancedness_study(spec)
    result = ExperimentResult(spec)
    points = spec.sweep_values if spec.kind != "single" else (None,)
    for value in points:
        m, k = spec.m, spec.k
        if spec.kind == "error_vs_m":
            m = int(value)
        elif spec.kind == "error_vs_k":
            k = int(value)
        for trial in range(spec.trials):
            inst = make_instance(m, spec.n, spec.l, k, spec.snr_db, spec.seed + trial)
            lam = noise_variance(inst.a, inst.x_true, spec.snr_db)
            for name in spec.solvers:
                rec = _timed_cell(name, inst.a, inst.y, inst.x_true, inst.support, k, spec, lam,
                                  value, trial)
                result.records.append(rec)
    _finish(result)
    return result


def run_init_sweep(spec: ExperimentSpec) -> ExperimentResult:
    """One IR-MMV run per ``alpha_g`` with identical step sizes and budget.

    The CSV gains ``alpha_v`` and ``final_loss`` columns.
    """
    result = ExperimentResult(spec, extra_columns=("alpha_v", "final_loss"))
    for trial in range(spec.trials):
        inst = make_instance(spec.m, spec.n, spec.l, spec.k, spec.snr_db, spec.seed + trial)
        for ag in spec.sweep_values:
            ag = float(ag)
            rec = _timed_cell("irmmv", inst.a, inst.y, inst.x_true, inst.support, spec.k, spec, 0.0,
                              ag, trial, {"alpha_g": ag, "alpha_v": None})
            rec.extra["alpha_v"] = balanced_alpha_v(ag, spec.l)
            result.records.append(rec)
    _finish(result)
    return result


def final_losses(result: ExperimentResult) -> Dict[float, float]:
    """Mean final loss per ``alpha_g`` from an init sweep."""
    out: Dict[float, List[float]] = {}
    for r in result.records:
        out.setdefault(r.sweep_value, []).append(r.extra.get("final_loss", math.nan))
    return {k: float(np.mean(v)) for k, v in out.items()}


@dataclass
class BalancednessReport:
    trajectory: object
    support: np.ndarray
    magnitudes: np.ndarray
    max_row_drift: float
    crossing_iters: np.ndarray
    order_ok: bool
    off_support_ratio: float
    drift_ok: bool


def half_crossings(times: np.ndarray, norms: np.ndarray) -> np.ndarray:
    """First recorded iteration at which each row reaches half its final norm."""
    final = norms[-1]
    hit = norms >= 0.5 * final[None, :]
    return np.array([times[np.argmax(hit[:, i])] for i in range(norms.shape[1])])


def balancedness_run(spec: ExperimentSpec, drift_tol: float = 1e-6) -> BalancednessReport:
    """Trace row growth on an instance whose rows have distinct magnitudes.

    Defaults used unless overridden in ``spec.irmmv``: simultaneous updates,
    ``eta = 1e-3``, ``4e5`` iterations, no stall-based stopping.
    """
    mags = tuple(float(v) for v in spec.row_magnitudes)
    inst = make_instance(spec.m, spec.n, spec.l, len(mags), spec.snr_db, spec.seed,
                         row_magnitudes=mags)
    base = dict(eta_g=1e-3, eta_v=1e-3, max_iters=400_000, update_order=SIMULTANEOUS,
                rel_change_tol=0.0, record_every=100)
    base.update(spec.irmmv)
    x, traj = recover(inst.a, inst.y, RecoveryConfig(**base))
    d = traj.as_arrays()
    q = d["half_g_sq"] - d["v_row_sq"]
    drift = float(np.abs(q - q[0]).max())
    cross = half_crossings(d["times"], d["row_norms"])[inst.support]
    # support rows carry the magnitudes in order; larger rows must cross first
    by_mag = cross[np.argsort(-np.asarray(mags), kind="stable")]
    order_ok = bool(np.all(np.diff(by_mag) > 0))
    fin = d["row_norms"][-1]
    off = np.setdiff1d(np.arange(spec.n), inst.support)
    ratio = float(fin[off].max() / fin[inst.support].min()) if off.size else 0.0
    return BalancednessReport(traj, inst.support, np.asarray(mags), drift, cross, order_ok, ratio,
                              drift <= drift_tol)


def run_balancedness_study(spec: ExperimentSpec) -> ExperimentResult:
    """Write the trajectory CSV to ``spec.output_path`` (if set) and return
    the checks in ``flags``."""
    rep = balancedness_run(spec)
    if spec.output_path:
        write_trajectory_csv(rep.trajectory, spec.output_path)
    result = ExperimentResult(spec)
    result.flags.update(
        max_row_drift=rep.max_row_drift,
        drift_ok=rep.drift_ok,
        crossing_iters=rep.crossing_iters.tolist(),
        order_ok=rep.order_ok,
        off_support_ratio=rep.off_support_ratio,
        report=rep,
    )
    return result


def mnist_problem(spec: ExperimentSpec):
    """``(A, X, Y)`` for the image experiment; noiseless unless ``snr_db`` is set."""
    x = load_mnist_idx(spec.mnist_path, spec.mnist_count)
    a = generate_sensing_matrix(spec.mnist_m, x.shape[0], spec.seed)
    y, _ = synthesize_measurements(a, x, spec.snr_db, spec.seed + 1)
    return a, x, y


def run_mnist(spec: ExperimentSpec) -> ExperimentResult:
    """Recover images in column batches of ``spec.mnist_batch``.

    One record per (solver, image) with the per-image relative error;
    ``support_exact`` holds whether exactly ``mnist_k`` rows are nonzero.
    """
    if spec.mnist_path is None:
        raise FileNotFoundError("mnist_path is required for the mnist experiment")
    a, x, y = mnist_problem(spec)
    result = ExperimentResult(spec, extra_columns=("nonzero_rows",))
    lam = noise_variance(a, x, spec.snr_db) if not is_noiseless(spec.snr_db) else 0.0
    batch = spec.mnist_batch if spec.mnist_batch > 0 else x.shape[1]
    for start in range(0, x.shape[1], batch):
        cols = slice(start, min(start + batch, x.shape[1]))
        xb, yb = x[:, cols], y[:, cols]
        for name in spec.solvers:
            t0 = time.perf_counter()
            try:
                xh, iters, _, status, _ = _run_solver(name, a, yb, spec.mnist_k, spec, lam)
            except IrmmvError as exc:
                xh, iters, status = None, -1, f"error:{type(exc).__name__}"
            dt = (time.perf_counter() - t0) / xb.shape[1]
            nz = int(np.count_nonzero(np.any(xh != 0, axis=1))) if xh is not None else -1
            for j in range(xb.shape[1]):
                err = relative_error(xb[:, j], xh[:, j]) if xh is not None else math.nan
                result.records.append(TrialRecord(
                    name, start + j, start + j, err, dt, int(iters), nz == spec.mnist_k, status,
                    {"nonzero_rows": nz},
                ))
    _finish(result)
    return result


def _finish(result: ExperimentResult) -> None:
    if result.spec.output_path:
        result.to_csv(result.spec.output_path)


def solver_means(result: ExperimentResult, sweep_value=None) -> Dict[str, float]:
    return {s: float(np.mean(result.errors(s, sweep_value))) for s in result.spec.solvers}
