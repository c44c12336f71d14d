from math import sqrt

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from bethe_iba import iba, wkb
from bethe_iba.errors import AdmissibilityError, DomainError, NonConvergence
from bethe_iba.partitions import Partition
from bethe_iba.special import alpha_context, f_alpha, kernel_k


@pytest.fixture(scope="module")
def ground_p(ctx2):
    return {p: iba.solve(ctx2, p, Partition(())) for p in (10.0, 20.0, 40.0)}


# ------------------------------------------------------------ primitives

def test_config_validation():
    with pytest.raises(DomainError):
        iba.IbaConfig(grid_size=4)
    with pytest.raises(DomainError):
        iba.IbaConfig(tol_fp=0.0)
    with pytest.raises(DomainError):
        iba.IbaConfig(xi_floor=10.0)
    with pytest.raises(DomainError):
        iba.IbaConfig(xi_max=0.5)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.2, 3.0), st.floats(0.5, 20.0), st.lists(st.floats(0.05, 0.95), min_size=1, max_size=8))
def test_monotone_solve_inverts(power, scale, fracs):
    fun = lambda y: (scale * y ** power, scale * power * y ** power)
    lo, hi = np.ones(len(fracs)), np.full(len(fracs), 50.0)
    target = scale * (1 + np.array(fracs) * (50.0 ** power - 1))
    y = iba.monotone_solve(fun, target, lo, hi, tol=1e-14)
    assert np.allclose(fun(y)[0], target, rtol=1e-13, atol=0)


def test_cheb_table_accuracy():
    tab = iba.ChebTable(lambda t: np.stack([np.sin(3 * t), np.exp(-t)]), 0.0, 4.0)
    t = np.linspace(0, 4, 1001)
    v = tab(t)
    assert np.max(np.abs(v[0] - np.sin(3 * t))) < 1e-13
    assert np.max(np.abs(v[1] - np.exp(-t))) < 1e-13


def _lbar_function(ctx, p, H=0):
    pr = iba.IbaProblem(ctx, p, Partition((1,) * H) if H else Partition(()))
    spl = pr.lam_spline(np.zeros(pr.config.grid_size))
    return pr, pr.monotone(spl, 0.0)


def test_restricted_convolution_vs_dense_trapezoid(ctx2):
    pr, f = _lbar_function(ctx2, 10.0)
    conv = iba.StepConvolver(ctx2, f, 1e-13)
    xi = np.array([1.0, 3.0, 10.0, 30.0])
    exact = conv.restricted(xi, 50.0)
    # dense trapezoid in log y on each constant piece; jumps located by brentq on f
    g = lambda y: f.fun(np.array([y]))[0][0]
    lo_j = int(np.ceil(g(1.0) - 0.5))
    hi_j = int(np.ceil(g(50.0) - 0.5))
    cuts = [1.0] + [brentq(lambda y: g(y) - j - 0.5, 1.0, 50.0, xtol=1e-15, rtol=1e-15)
                    for j in range(lo_j, hi_j)] + [50.0]
    ref = np.zeros_like(xi)
    for c, (a, b) in enumerate(zip(cuts[:-1], cuts[1:])):
        v = np.linspace(np.log(a), np.log(b), 4001)
        ref += (lo_j + c) * np.trapezoid(kernel_k(ctx2, xi[:, None] / np.exp(v)[None, :]), v, axis=1)
    assert np.max(np.abs(exact - ref)) < 1e-7


def test_constant_ceiling_single_piece(ctx2):
    # f rises slowly enough that ceil(f - 1/2) = 3 on [1, Y]
    terms = ((0.5, 1e-3, 0.0), (0.0, 3.199, 0.0))
    f = iba.MonotoneFunction(lambda y: (3.199 + 1e-3 * np.sqrt(y), 5e-4 * np.sqrt(y)), terms, 40.0)
    conv = iba.StepConvolver(ctx2, f, 1e-13)
    assert conv.cross.j0 == 3 and conv.cross.J == 3
    xi = np.array([0.5, 2.0, 7.0])
    assert np.allclose(conv.restricted(xi, 40.0), 3 * (f_alpha(ctx2, xi) - f_alpha(ctx2, xi / 40.0)),
                       atol=1e-15, rtol=0)


def test_full_convolution_of_lbar(ctx2):
    # K1[ceil(lbar - 1/2)] = lbar + 2p + K1[<lbar>] with small oscillatory part
    p = 10.0
    pr, f = _lbar_function(ctx2, p)
    xi = np.geomspace(1.0, 100.0, 30)
    val = iba.convolve_ceiling(ctx2, f, xi)
    osc = val - pr.lbar_both(xi)[0] - 2 * p
    assert np.max(np.abs(osc) * xi ** ctx2.exponent) < 2.0 / p


def test_bounded_f_is_rejected(ctx2):
    f = iba.MonotoneFunction(lambda y: (3.2 - 0.1 / y, 0.1 / y), ((0.0, 3.2, 0.0), (-1.0, -0.1, 0.0)), 40.0)
    with pytest.raises(NonConvergence):
        iba.StepConvolver(ctx2, f, 1e-13)


def test_tail_bound_guard(ctx2):
    _, f = _lbar_function(ctx2, 10.0)
    with pytest.raises(NonConvergence):
        iba.convolve_ceiling(ctx2, f, np.array([5.0]), tail_tol=1e-30)


def test_series_tail_integral_at_origin(ctx2):
    assert iba.series_tail_integral(ctx2, np.array([0.0]), ((0.5, 1.0, 0.0),), 10.0)[0] == 0.0


# ------------------------------------------------------------- the map

def test_map_at_zero_is_order_one_over_p(ctx2):
    norms = []
    for p in (10.0, 20.0, 40.0):
        pr = iba.IbaProblem(ctx2, p, Partition(()))
        st0 = iba.IbaState(np.zeros(pr.config.grid_size), np.zeros(0), pr.omega)
        new = iba.map_n(ctx2, p, Partition(()), pr.lin, st0)
        norms.append(np.max(np.abs(new.lam)))
    assert norms[0] * 10 < 1.0
    assert 1.5 < norms[0] / norms[1] < 2.6 and 1.5 < norms[1] / norms[2] < 2.6


def test_mu_hat_estimate(ctx2):
    devs = []
    for p in (10.0, 20.0):
        pr = iba.IbaProblem(ctx2, p, Partition((1,)))
        st0 = pr.initial_state()
        new = pr.map_n(st0)
        devs.append(abs(new.mu[0] - st0.mu[0]))
    assert devs[0] < 5.0 / 100 and devs[0] / devs[1] > 3.0


def test_contraction_on_random_pairs(ctx2):
    rng = np.random.default_rng(3)
    pr = iba.IbaProblem(ctx2, 10.0, Partition((1,)))
    base = pr.initial_state()
    n = pr.config.grid_size
    bound = max((ctx2.alpha - 1) / (ctx2.alpha + 1), 0.5) + 0.1
    t = pr.t_grid / pr.t_grid[-1]
    for _ in range(3):
        da = 0.01 * np.sin(np.pi * t * rng.integers(1, 4)) * rng.uniform(-1, 1)
        db = 0.01 * np.sin(np.pi * t * rng.integers(1, 4)) * rng.uniform(-1, 1)
        X = iba.IbaState(da, base.mu + rng.uniform(0, 1e-3, 1), base.omega)
        Y = iba.IbaState(db, base.mu + rng.uniform(0, 1e-3, 1), base.omega)
        NX, NY = pr.map_n(X), pr.map_n(Y)
        num = pr.norm(NX.lam - NY.lam, NX.mu - NY.mu)
        assert num <= bound * pr.norm(X.lam - Y.lam, X.mu - Y.mu)


# --------------------------------------------------------------- solves

def test_ground_state_basics(ground10, ctx2):
    sol = ground10
    d = sol.diagnostics
    assert d["iterations"] <= 50
    assert d["contraction_ratio"] <= (ctx2.alpha - 1) / (ctx2.alpha + 1) + 0.1
    assert abs(iba.z_eval(sol, 0.0) + 20.0) < 1e-9
    zo = iba.z_eval(sol, sol.omega)
    assert -0.5 < zo <= 0.5
    assert np.max(np.abs(sol.state.lam)) <= 0.25 * (ctx2.alpha - 1)
    x = sol.omega * sol.problem.xi_grid
    assert np.all(np.diff(iba.z_eval(sol, x)) > 0)
    assert min(sol.roots) == 0


def test_z_left_part_continuous(ground10):
    sol = ground10
    eps = 1e-9
    left = iba.z_eval(sol, sol.omega * (1 - eps))
    right = iba.z_eval(sol, sol.omega)
    assert abs(left - right) < 1e-6


def test_roots_satisfy_counting(ground10):
    sol = ground10
    ks = [0, 1, 5, 19]
    x = np.array([sol.roots[k] for k in ks])
    assert np.allclose(iba.z_eval(sol, x), np.array(ks) + 0.5, atol=1e-10, rtol=0)


def test_roots_api(ground10):
    out = iba.roots(ground10, 0, 3)
    assert [k for k, _ in out] == [0, 1, 2, 3]
    with pytest.raises(DomainError):
        iba.roots(ground10, -30, 0)
    # beyond k_max the roots are computed on demand
    k = ground10.problem.config.k_max + 5
    (kk, xk), = iba.roots(ground10, k, k)
    assert abs(iba.z_eval(ground10, xk) - (k + 0.5)) < 1e-9


def test_ground_state_root_estimate(ground_p, ctx2):
    sol = ground_p[40.0]
    s = iba.subleading_slope(ctx2)
    x0 = sol.roots[0]
    scaled = x0 / 40.0 ** (4 / 3) / ctx2.A
    assert abs(scaled - 1 - s * 0.5 / 40.0) < 5.0 / 40.0 ** 2


def test_bae_residuals(ground10):
    sol = ground10
    logs = iba.log_bae_residuals(sol, list(range(20)))
    assert np.max(logs) < 1e-6
    r = iba.residuals(sol, 0)
    assert r["log_bae"] < 1e-6 and r["mult_bae"] < 1e-6 and r["tail_bound"] < 1e-9
    assert r["mult_bae"] < 2 * np.pi * r["log_bae"] * 10 + 1e-9


def test_q_values(ground10):
    sol = ground10
    assert iba.q_eval(sol, 0.0)[0] == 1.0
    for k in (0, 3):
        assert abs(iba.q_eval(sol, sol.roots[k])[0]) < 1e-12
    q1, _ = iba.q_eval(sol, 10.0)
    assert abs(q1.imag) < 1e-12 and 0 < q1.real < 1
    qn, _ = iba.q_eval(sol, 1.0, normalize=True)
    assert abs(qn - 1) < 1e-14


def test_unconverged_negative_control(ctx2, ground10):
    pr = iba.IbaProblem(ctx2, 10.0, Partition(()))
    st1 = pr.map_n(pr.initial_state())
    raw = iba._assemble(pr, st1, {"iterations": 1})
    bad = np.max(iba.log_bae_residuals(raw, list(range(10))))
    good = np.max(iba.log_bae_residuals(ground10, list(range(10))))
    assert bad > 1e3 * good


def test_excited_state(excited10):
    sol = excited10
    assert 0 not in sol.roots and -1 in sol.roots
    assert abs(iba.z_eval(sol, sol.h[0]) - 0.5) < 1e-9
    assert sol.holeset.finite_holes == (0,)
    with pytest.raises(DomainError):
        iba.residuals(sol, 0)
    assert iba.residuals(sol, 1)["log_bae"] < 1e-6


def test_admissibility_gate(ctx2):
    with pytest.raises(AdmissibilityError):
        iba.solve(ctx2, 0.4, Partition((3, 1)))


def test_lambda_decays_like_one_over_p(ground_p):
    n = [np.max(np.abs(ground_p[p].state.lam)) for p in (10.0, 20.0, 40.0)]
    assert 1.5 < n[0] / n[1] < 2.6 and 1.5 < n[1] / n[2] < 2.6


def test_asymptotic_checks(ground_p):
    devs = [iba.check_asymptotics(ground_p[p]) for p in (10.0, 20.0, 40.0)]
    u = [d["uniform_deviation"] for d in devs]
    assert max(u) / min(u) < 2.0              # |x_k / xhat_k - 1| p^2 bounded
    for d in devs:
        assert abs(d["tail_constant"]) < 1e-3
        assert d["state_norm"] > 0


def test_oscillation_scale_bounded(ground_p):
    v = [iba.oscillation_scale(ground_p[p]) for p in (10.0, 20.0, 40.0)]
    assert max(v) / min(v) < 3.0


def test_omega_equivalence(ctx2, excited10):
    lo, hi = wkb.omega_window(ctx2, 10.0, 1, 0.25)
    other = iba.solve(ctx2, 10.0, Partition((1,)), omega=hi)
    x = np.geomspace(max(hi, excited10.omega), excited10.omega * 150, 300)
    assert np.max(np.abs(iba.z_eval(excited10, x) - iba.z_eval(other, x))) < 1e-8


def test_serialization(ground10):
    d = iba.solution_to_dict(ground10)
    assert set(d) >= {"alpha", "p", "partition", "omega", "iterations", "contraction_ratio",
                      "roots", "holes", "residual_max", "tail_bound"}
    assert d["roots"][0]["k"] == 0 and d["holes"] == []
    rows = iba.root_table(ground10, [0, 1, 2])
    assert len(rows) == 3 and all(len(r) == len(iba.ROOT_CSV_HEADER) for r in rows)
    assert all(r[2] < 1e-6 and r[3] < 1e-6 for r in rows)


def test_deterministic(ctx2, ground10):
    again = iba.solve(ctx2, 10.0, Partition(()))
    assert again.roots == ground10.roots
