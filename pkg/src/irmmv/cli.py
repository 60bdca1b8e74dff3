"""Command-line entry point: ``irmmv {recover,bench,dynamics,mnist}``."""
from __future__ import annotations

import argparse
import math
import sys
from dataclasses import fields
from typing import Dict, List

import numpy as np

from . import dynamics as dyn
from .bench import ExperimentSpec, relative_error, run_experiment, solver_means
from .problem_gen import make_instance, mu_coherence
from .solver import RecoveryConfig, recover

SPEC_FIELDS = {f.name for f in fields(ExperimentSpec)}
RECOVERY_FIELDS = {f.name for f in fields(RecoveryConfig)}


def parse_value(text: str):
    """Best-effort scalar or comma-separated list conversion."""
    text = text.strip()
    if "," in text:
        return tuple(parse_value(t) for t in text.split(",") if t.strip())
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def read_config(path) -> Dict[str, object]:
    """Read ``key = value`` lines; ``#`` starts a comment."""
    out: Dict[str, object] = {}
    if not path:
        return out
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{n}: expected key=value")
            out[key.strip()] = parse_value(value)
    return out


def merged_config(args) -> Dict[str, object]:
    cfg = read_config(args.config)
    for item in args.set or []:
        key, _, value = item.partition("=")
        cfg[key.strip()] = parse_value(value)
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def split_config(cfg: Dict[str, object]):
    """Separate ``irmmv.*`` keys (solver settings) from the rest."""
    solver = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("irmmv.")}
    unknown = set(solver) - RECOVERY_FIELDS
    if unknown:
        raise ValueError(f"unknown solver setting(s): {sorted(unknown)}")
    rest = {k: v for k, v in cfg.items() if not k.startswith("irmmv.")}
    return rest, solver


def _as_tuple(v):
    return v if isinstance(v, tuple) else (v,)


def build_spec(cfg: Dict[str, object], kind: str = None, out: str = None) -> ExperimentSpec:
    rest, solver = split_config(cfg)
    if kind:
        rest.setdefault("kind", kind)
    unknown = set(rest) - SPEC_FIELDS
    if unknown:
        raise ValueError(f"unknown setting(s): {sorted(unknown)}")
    for key in ("sweep_values", "solvers", "row_magnitudes"):
        if key in rest:
            rest[key] = _as_tuple(rest[key])
    if out:
        rest["output_path"] = out
    return ExperimentSpec(irmmv=solver, **rest)


def cmd_recover(args) -> int:
    cfg = merged_config(args)
    rest, solver = split_config(cfg)
    mags = rest.get("row_magnitudes", "constant-one")
    inst = make_instance(
        int(rest.get("m", 50)), int(rest.get("n", 25)), int(rest.get("l", 100)),
        int(rest.get("k", 3)), rest.get("snr_db", 40.0), int(rest.get("seed", 0)),
        row_magnitudes=_as_tuple(mags) if mags != "constant-one" else mags,
    )
    x, traj = recover(inst.a, inst.y, RecoveryConfig(**solver))
    if args.out:
        traj.to_csv(args.out)
    print(f"rel_error={relative_error(inst.x_true, x):.6e} iters={traj.iterations} "
          f"stop={traj.stop_reason} loss={traj.loss[-1]:.6e}")
    return 0


def cmd_bench(args) -> int:
    spec = build_spec(merged_config(args), "single", args.out)
    res = run_experiment(spec)
    if spec.kind == "balancedness":
        f = res.flags
        print(f"max_row_drift={f['max_row_drift']:.3e} crossing={f['crossing_iters']} "
              f"order_ok={f['order_ok']}")
        return 0
    for (solver, value), (mean, std) in res.aggregates().items():
        print(f"{solver:8s} {value!s:>10} mean={mean:.4e} std={std:.4e}")
    return 0


def cmd_mnist(args) -> int:
    cfg = merged_config(args)
    cfg.setdefault("mnist_count", 10)
    cfg.setdefault("snr_db", "noiseless")
    cfg.setdefault("solvers", ("irmmv", "momp", "msp", "lsq"))
    spec = build_spec(cfg, "mnist", args.out)
    res = run_experiment(spec)
    for solver in spec.solvers:
        errs = res.errors(solver)
        print(f"{solver:8s} images={errs.size} max_rel_error={np.nanmax(errs):.4e}")
    return 0


def dynamics_reports(cfg: Dict[str, object]) -> List[dyn.CheckReport]:
    """Run the verification suite on the small default instance."""
    seed = int(cfg.get("seed", 2))
    snr = cfg.get("snr_db", 20.0)
    alpha_g = float(cfg.get("alpha_g", 0.1))
    step = float(cfg.get("step", 1e-4))
    horizon = float(cfg.get("horizon", 10.0))
    every = int(cfg.get("record_every", 1))
    inst = dyn.toy_instance(seed, snr)
    n, l = inst.x_true.shape
    start = dyn.balanced_start(n, l, alpha_g)
    run = dyn.integrate_flow(start, inst.a, inst.y, step, int(round(horizon / step)), every)
    reports = [
        dyn.verify_balancedness(run, float(cfg.get("drift_tol", 1e-6))),
        dyn.remark_identity(run),
        dyn.verify_row_norm_bounds(run),
        dyn.verify_rate_law(run, float(cfg.get("rate_tol", 1e-3))),
    ]
    alpha_v = start.v[0, 0]
    ref = dyn.build_reference_trajectory(inst.support, alpha_v ** 3, start.v, inst.a, inst.y,
                                         step, int(round(horizon / step)), every)
    close, lem = dyn.verify_trajectory_closeness(run, ref, float(cfg.get("eps_app", 0.1)),
                                                 float(cfg.get("d", 10.0)))
    reports += [close, lem]
    return reports


def cmd_dynamics(args) -> int:
    cfg = merged_config(args)
    reports = dynamics_reports(cfg)
    if args.out:
        dyn.write_report_csv(reports, args.out)
    for rep in reports:
        extra = " ".join(f"{k}={v:.3e}" for k, v in rep.summary.items()
                         if isinstance(v, float) and math.isfinite(v))
        print(f"{rep.name:16s} rows={len(rep):7d} violations={rep.violations} {extra}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="irmmv", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, func, hlp in (
        ("recover", cmd_recover, "recover one synthetic instance and dump its trajectory"),
        ("bench", cmd_bench, "run a synthetic experiment and write the results CSV"),
        ("dynamics", cmd_dynamics, "run the gradient-flow checks and write a report CSV"),
        ("mnist", cmd_mnist, "recover MNIST images with a Gaussian sensing matrix"),
    ):
        sp = sub.add_parser(name, help=hlp)
        sp.add_argument("--config", help="file of key=value lines")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", help="output CSV path")
        sp.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
