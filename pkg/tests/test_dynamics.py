import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from irmmv import dynamics as dyn
from irmmv.errors import ConstructionError
from irmmv.solver import FactorPair, RecoveryConfig, recover, reconstruct, residual_lambda


@pytest.fixture(scope="module")
def toy():
    return dyn.toy_instance()


def test_unbalancedness_examples():
    rep = dyn.unbalancedness(FactorPair([2.0], [[1.0]]))
    np.testing.assert_array_equal(rep.per_row, [1.0])
    assert rep.epsilon == rep.epsilon_r == 1.0
    fp = FactorPair([1.0, 0.5, 2.0], [[0.1, 0.2], [0.3, 0.0], [1.0, 1.0]])
    doubled = dyn.unbalancedness(FactorPair(2 * fp.g, 2 * fp.v))
    np.testing.assert_allclose(doubled.per_row, 4 * dyn.unbalancedness(fp).per_row, rtol=1e-15)


def test_balanced_start_is_balanced():
    rep = dyn.unbalancedness(dyn.balanced_start(25, 100, 1e-4))
    assert rep.epsilon_r <= 4 * np.finfo(float).eps * 0.5e-8
    assert rep.epsilon == pytest.approx(25 * rep.epsilon_r, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_unbalancedness_relations(seed):
    rng = np.random.default_rng(seed)
    fp = FactorPair(rng.normal(size=5), rng.normal(size=(5, 3)))
    rep = dyn.unbalancedness(fp)
    assert rep.epsilon == pytest.approx(abs(rep.per_row.sum()), abs=1e-12)
    assert rep.epsilon_r == pytest.approx(np.abs(rep.per_row).max(), abs=1e-12)
    const = FactorPair(np.full(5, fp.g[0]), np.full((5, 3), fp.v[0, 0]))
    crep = dyn.unbalancedness(const)
    assert abs(crep.epsilon - 5 * crep.epsilon_r) <= 1e-12


def test_flow_step_fixed_point_and_agreement(toy):
    rng = np.random.default_rng(0)
    fp = FactorPair(rng.uniform(0.1, 1, 6), rng.uniform(0.1, 1, (6, 3)))
    y_fit = toy.a @ reconstruct(fp)
    out = dyn.flow_step(fp, toy.a, y_fit, 1e-3)
    np.testing.assert_array_equal(out.g, fp.g)
    np.testing.assert_array_equal(out.v, fp.v)
    step = dyn.flow_step(fp, toy.a, toy.y, 1e-3)
    cfg = RecoveryConfig(eta_g=1e-3, eta_v=1e-3, max_iters=1, update_order="simultaneous",
                         loss_tol=0, rel_change_tol=0)
    _, traj = recover(toy.a, toy.y, cfg, init=fp)
    assert step.g.tobytes() == traj.final.g.tobytes()
    assert step.v.tobytes() == traj.final.v.tobytes()


def test_one_step_drift_is_second_order(toy):
    rng = np.random.default_rng(1)
    fp = FactorPair(rng.uniform(0.2, 1, 6), rng.uniform(0.2, 1, (6, 3)))
    q0 = dyn.per_row_balance(fp.g, fp.v)
    drift = []
    for h in (1e-3, 5e-4):
        out = dyn.flow_step(fp, toy.a, toy.y, h)
        drift.append(np.abs(dyn.per_row_balance(out.g, out.v) - q0).max())
    d1, d2 = drift
    assert d1 / d2 >= 3.5


def test_unbalanced_start_keeps_its_offsets(toy):
    rng = np.random.default_rng(2)
    fp = FactorPair(rng.uniform(0.2, 0.5, 6), rng.uniform(0.0, 0.1, (6, 3)))
    run = dyn.integrate_flow(fp, toy.a, toy.y, 1e-4, 5000, 50)
    rep = dyn.verify_balancedness(run)
    offsets = np.abs(rep.summary["initial_per_row"])
    assert offsets.min() > 1e-3
    # the nonzero offsets persist; integrator drift is tiny next to them
    assert rep.summary["max_row_drift"] <= 1e-2 * offsets.min()


def test_central_difference_exact_on_quadratics():
    t = np.linspace(0, 1, 11)
    vals = np.stack([t ** 2, 3 * t], axis=1)
    k, d = dyn.central_difference(vals, t)
    np.testing.assert_allclose(d[:, 0], 2 * t[k], atol=1e-12)
    np.testing.assert_allclose(d[:, 1], 3.0, atol=1e-12)


def test_row_norm_bounds_zero_row(toy):
    start = dyn.balanced_start(6, 3, 0.1)
    start.g[0] = 0.0
    start.v[0] = 0.0
    run = dyn.integrate_flow(start, toy.a, toy.y, 1e-4, 2000, 10)
    rep = dyn.verify_row_norm_bounds(run)
    zero = rep.row == 0
    assert np.all(rep.lhs[zero] == 0) and np.all(rep.rhs_lower[zero] == 0)
    assert np.all(rep.rhs_upper[zero] == 0)
    assert rep.passed


def exact_row_speed(fp, a, y):
    """Chain-rule speed of ||X_i|| along the flow; independent of the lab code."""
    x = reconstruct(fp)
    lam = residual_lambda(a, y, x)
    r = np.linalg.norm(x, axis=1)
    g2 = fp.g ** 2
    vv = np.sum(fp.v ** 2, axis=1)
    return 2.0 / r * np.sum(lam * x, axis=1) * (g2 ** 2 + 4 * g2 * vv)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.05, 2.0))
def test_rate_identity_pointwise_under_balance(seed, scale):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((4, 5))
    y = rng.standard_normal((4, 3))
    v = rng.normal(size=(5, 3)) * scale
    g = np.sqrt(2 * np.sum(v ** 2, axis=1))
    fp = FactorPair(g, v)
    x = reconstruct(fp)
    corr = np.sum(residual_lambda(a, y, x) * x, axis=1) / np.linalg.norm(x, axis=1)
    rhs = dyn.RATE_CONSTANT * corr * np.linalg.norm(x, axis=1) ** (4 / 3)
    np.testing.assert_allclose(exact_row_speed(fp, a, y), rhs, rtol=1e-10, atol=1e-12)
    lo, hi = dyn.row_norm_bounds(corr, np.linalg.norm(x, axis=1), 0.0)
    speed = exact_row_speed(fp, a, y)
    assert np.all(lo <= speed + 1e-12) and np.all(speed <= hi + 1e-12)


def test_rate_constant_frozen():
    # 6 * 2**(2/3), 50-digit oracle
    assert dyn.RATE_CONSTANT == pytest.approx(9.5244063118091968485, rel=1e-15)


def test_rate_law_invariant_under_scaling_y(toy):
    rng = np.random.default_rng(3)
    v = rng.uniform(0.2, 1, (6, 3))
    fp = FactorPair(np.sqrt(2 * np.sum(v ** 2, axis=1)), v)
    for c in (0.5, 3.0):
        x = reconstruct(fp)
        corr = np.sum(residual_lambda(toy.a, c * toy.y, x) * x, axis=1) / np.linalg.norm(x, axis=1)
        rhs = dyn.RATE_CONSTANT * corr * np.linalg.norm(x, axis=1) ** (4 / 3)
        np.testing.assert_allclose(exact_row_speed(fp, toy.a, c * toy.y), rhs, rtol=1e-10)


def test_beta_examples():
    p = dyn.SmoothnessParams(b_g=1, b_v=0.5, b_y=1, c=1, mu=0, m=1, n=1, l=1)
    assert dyn.beta_constant(p) == 16.0
    # 50-digit oracle for a generic parameter set
    q = dyn.SmoothnessParams.from_bounds(1.5, 0.6, 2.0, 0.3, 6, 6, 3)
    assert q.c == 1.5
    assert dyn.beta_constant(q) == pytest.approx(14282.144549051448387, rel=1e-14)
    with pytest.raises(ValueError):
        dyn.SmoothnessParams(b_g=2, b_v=0.5, b_y=1, c=1, mu=0, m=1, n=1, l=1)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 1), st.floats(0.1, 5), st.floats(1, 3), st.integers(1, 10),
       st.integers(1, 10), st.integers(1, 10), st.sampled_from(["mu", "b_y", "c", "m", "n", "l"]))
def test_beta_monotone(mu, by, c, m, n, l, which):
    base = dict(b_g=1.0, b_v=0.5, b_y=by, c=c, mu=mu, m=m, n=n, l=l)
    bumped = dict(base)
    bumped[which] = base[which] * 2 if which in ("mu", "b_y", "c") else base[which] + 1
    bumped["mu"] = min(bumped["mu"], 1.0)
    if bumped == base:
        return
    assert dyn.beta_constant(dyn.SmoothnessParams(**bumped)) > dyn.beta_constant(dyn.SmoothnessParams(**base))


def test_beta_c_homogeneity():
    base = dict(b_g=1, b_v=0.5, b_y=1e-300, mu=0.5, m=3, n=2, l=2)
    first = lambda c: dyn.beta_constant(dyn.SmoothnessParams(c=c, **base))
    assert first(2.0) == pytest.approx(16 * first(1.0), rel=1e-12)


def test_theorem_bound_examples():
    assert dyn.theorem_init_bound_log(1.0, 0.0, 123.0, 1, 1, dt=0.0) == pytest.approx(
        -3.2307340881768587703, abs=1e-14)
    assert dyn.d_tilde(6, 3, 1.0) == pytest.approx(4.8076491908480995976, rel=1e-14)
    assert dyn.theorem_init_bound_log(0.1, 100.0, 0.5, 6, 3, d=1.0) == pytest.approx(
        -59.722197753419262318, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-3, 0.9), st.floats(1e-3, 1e4), st.floats(0, 10), st.floats(1e-3, 10),
       st.integers(1, 30), st.integers(1, 100))
def test_theorem_bound_decreasing_in_horizon(eps, beta, t, dt, n, l):
    a = dyn.theorem_init_bound_log(eps, beta, t, n, l, d=1.0)
    b = dyn.theorem_init_bound_log(eps, beta, t + dt, n, l, d=1.0)
    assert b < a
    assert (a - b) == pytest.approx(beta * dt, rel=1e-9)


def test_theorem_bound_underflows_at_paper_scale():
    from irmmv.problem_gen import make_instance, mu_coherence
    inst = make_instance(seed=0)
    p = dyn.SmoothnessParams.from_bounds(1.0, 0.5, float(np.abs(inst.y).max()), mu_coherence(inst.a), 50, 25, 100)
    val = dyn.theorem_init_bound_log(0.1, dyn.beta_constant(p), 1.0, 25, 100, d=1.0)
    assert val < math.log(1e-300)


def test_rho_interval_examples():
    lo, hi = dyn.rho_interval(1e-3, 0.0, 5.0, 1, 1)
    assert hi == 1e-3 and lo < hi
    lo, hi = dyn.rho_interval(1e-3, 2.0, 0.25, 6, 3)
    assert hi == 1e-3
    assert lo == pytest.approx(-0.099361100382752620492, rel=1e-13)
    assert dyn.rho_interval(10.0, 1.0, 1.0, 6, 3) is None
    assert dyn.default_rho(1e-3, (lo, hi)) == pytest.approx(1e-9, rel=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-8, 1e2), st.floats(0, 50), st.floats(0, 2), st.integers(1, 10), st.integers(1, 10))
def test_rho_interval_cap_and_feasibility(alpha, beta, t, n, l):
    out = dyn.rho_interval(alpha, beta, t, n, l)
    limit = math.sqrt(2) * math.exp(-beta * t) / (math.sqrt(l * n) * (math.sqrt(2 * l) - 1)) if l > 0.5 else math.inf
    if out is None:
        assert alpha > limit * (1 - 1e-9)
    else:
        assert out[1] == alpha
        assert alpha <= limit * (1 + 1e-9)


def test_reference_init_examples():
    v0 = np.full((6, 3), 0.7)
    ref = dyn.reference_init([1, 4], 1e-6, v0)
    s = 1e-2
    np.testing.assert_allclose(ref.g[[1, 4]], math.sqrt(2) * s, rtol=1e-14)
    np.testing.assert_allclose(ref.v[[1, 4]], s / math.sqrt(3), rtol=1e-14)
    np.testing.assert_allclose(np.linalg.norm(reconstruct(ref), axis=1)[[1, 4]], 2e-6, rtol=1e-13)
    assert not ref.g[[0, 2, 3, 5]].any() and not ref.v[[0, 2, 3, 5]].any()


def test_reference_trajectory_rank_and_guard(toy):
    start = dyn.balanced_start(6, 3, 0.1)
    ref = dyn.build_reference_trajectory(toy.support, start.v[0, 0] ** 3, start.v, toy.a, toy.y,
                                         1e-4, 3000, 10)
    nonzero = np.any(ref.run.x != 0, axis=2).sum(axis=1)
    assert np.all(nonzero <= len(toy.support))
    with pytest.raises(ValueError):
        dyn.build_reference_trajectory(toy.support, 1.0, start.v, toy.a, toy.y, 1e-4, 1, alpha_v=0.5)
    bad = FactorPair(np.ones(6), np.ones((6, 3)))
    with pytest.raises(ConstructionError):
        dyn.integrate_flow(bad, toy.a, toy.y, 1e-4, 2, zero_rows=np.array([0]))


def test_identical_starts_have_zero_distance(toy):
    v0 = np.full((6, 3), 0.2)
    ref = dyn.build_reference_trajectory(np.arange(6), 1e-3, v0, toy.a, toy.y, 1e-4, 500, 50)
    est = dyn.integrate_flow(ref.factors, toy.a, toy.y, 1e-4, 500, 50)
    close, lem = dyn.verify_trajectory_closeness(est, ref, 0.1, 10.0)
    assert close.lhs[0] == 0.0 and close.summary["max_distance"] == 0.0
    assert lem.passed


def test_lemma4_gap_random_pairs():
    rng = np.random.default_rng(5)
    for _ in range(200):
        a = FactorPair(rng.normal(size=4), rng.normal(size=(4, 3)))
        b = FactorPair(rng.normal(size=4), rng.normal(size=(4, 3)))
        bound, actual = dyn.lemma4_gap(a, b)
        assert bound - actual >= -1e-12


def test_corollary_degenerate_cases(toy):
    start = dyn.balanced_start(6, 3, 0.1)
    ref = dyn.build_reference_trajectory(toy.support, 1e-3, start.v, toy.a, toy.y, 1e-4, 2000, 20)
    same = ref.run
    rep = dyn.verify_corollary_convergence(same, ref, ref.run.x[-1], 0.1)
    assert rep.summary["conclusive"] and rep.passed
    far = dyn.verify_corollary_convergence(same, ref, ref.run.x[-1] + 100.0, 0.1)
    assert far.summary["conclusive"] is False and not far.passed


def test_report_csv(tmp_path, toy):
    run = dyn.integrate_flow(dyn.balanced_start(6, 3, 0.1), toy.a, toy.y, 1e-4, 100, 10)
    path = tmp_path / "rep.csv"
    dyn.write_report_csv([dyn.verify_balancedness(run)], path)
    lines = path.read_text().splitlines()
    assert lines[0] == "check,row,time,lhs,rhs_lower,rhs_upper,violation"
    assert len(lines) == 1 + 11 * 7
