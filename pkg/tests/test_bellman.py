import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.special import dawsn

from dyadicweights import bellman as bm
from dyadicweights.construction import build_weight, solve_parameters
from dyadicweights.dyadic import DyadicInterval, StepFunction, pointwise
from dyadicweights.operators import square_function


def dawson_phi(t):
    return math.sqrt(2) * dawsn(t / math.sqrt(2))


def erfi_phi(t):
    with mpmath.workdps(40):
        t = mpmath.mpf(t)
        return float(mpmath.sqrt(mpmath.pi / 2) * mpmath.exp(-t * t / 2) * mpmath.erfi(t / mpmath.sqrt(2)))


@pytest.fixture(scope="module")
def p10():
    return bm.BellmanParams(Q=10.0)


def test_phi_values():
    assert bm.phi(0) == 0
    ref = math.exp(-0.5) * quad(lambda s: math.exp(s * s / 2), 0, 1)[0]
    assert abs(bm.phi(1.0) - ref) < 1e-13
    assert abs(bm.phi(1.0) - 0.7248) < 1e-3
    with pytest.raises(ValueError):
        bm.phi(-1)


@settings(max_examples=300)
@given(st.floats(min_value=0.0, max_value=1e5))
def test_phi_against_dawson(t):
    ref = dawson_phi(t)
    assert abs(bm.phi(t) - ref) <= 1e-12 * max(ref, 1e-300)


def test_phi_against_erfi_high_precision():
    for t in np.concatenate([np.linspace(0.01, 2, 40), np.linspace(2.01, 12, 60)]):
        assert abs(bm.phi(float(t)) / erfi_phi(float(t)) - 1) < 1e-12


def test_phi_array_matches_scalar():
    ts = np.concatenate([np.linspace(0, 20, 4001), np.geomspace(20, 1e7, 200)])
    vec = bm.phi_array(ts)
    ref = np.array([dawson_phi(t) for t in ts])
    assert np.all(np.abs(vec - ref) <= 1e-12 * np.maximum(ref, 1e-300))


def test_phi_ode_and_shape():
    assert bm.ode_residual() <= 1e-10
    grid = np.linspace(0, 1, 200)
    vals = bm.phi_array(grid)
    assert np.all(np.diff(vals) > 0)
    wide = np.linspace(1e-3, 50, 2000)
    f = bm.phi_array(wide)
    assert np.all(f <= wide)
    # tau*phi <= 1 only up to the crossing near 1.30693; beyond it tends to 1 from above like 1 + tau^-2
    assert np.all(wide[wide <= 1.3069] * f[wide <= 1.3069] <= 1)
    assert (wide * f).max() < 1.2848
    assert np.all(np.abs(wide[-50:] * f[-50:] - 1 - wide[-50:] ** -2.0) < 1e-5)
    small = np.linspace(1e-4, 1e-3, 50)
    assert all(bm.phi_second(float(t)) < 0 for t in small)


def test_theta_examples(p10):
    prm = bm.BellmanParams(Q=10, K=100)
    # gamma*tau = 0.5 lies below the hyperbola gamma*tau = 1
    with pytest.raises(ValueError, match="outside hyperbolic domain"):
        bm.theta(0.5, 1.0, prm)
    assert bm.theta(1.5, 1.0, prm) == 1.5
    with pytest.raises(ValueError, match="outside hyperbolic domain"):
        bm.theta(50.0, 1.0, prm)
    for g, t in [(3.0, 1.0), (20.0, 0.1), (1.0, 5.0), (90.0, 0.1)]:
        assert bm.theta(g, t, p10) == min(g, p10.K * bm.phi(t))
        assert bm.theta(g, t, p10) <= p10.K * t


def test_theta_monotone_in_gamma(p10):
    t = 0.3
    gs = np.linspace(1 / t, p10.Q / t, 400)
    vals = [bm.theta(float(g), t, p10) for g in gs]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_bfun_examples():
    prm = bm.BellmanParams(Q=10, K=2.0)
    assert bm.bfun(1.0, 1.0, 1.0, prm) == 1.0
    assert bm.bfun(3.0, 1.0, 0.0, prm) == 3.0
    with pytest.raises(ValueError, match="outside hyperbolic domain"):
        bm.bfun(0.1, 0.1, 1.0, prm)


@given(st.floats(0.05, 20), st.floats(1, 10), st.floats(1e-3, 1e3), st.floats(0.05, 20))
def test_bfun_homogeneity_and_growth(v, prod, lam, t):
    prm = bm.BellmanParams(Q=10)
    u = prod / v
    b = bm.bfun(u, v, lam, prm)
    assert abs(bm.bfun(u * t, v / t, lam / t ** 2, prm) - t * b) <= 1e-12 * t * b
    assert b * lam / (prm.K * v) <= 1 + 1e-12
    assert bm.bfun(u, v, lam * 1.5, prm) <= b


def test_params_defaults():
    prm = bm.BellmanParams(Q=10)
    assert prm.K == pytest.approx(10 / bm.phi(1.0))
    assert prm.delta == 1.0 and prm.c_drift == 0.125 and prm.tau0 == 0.001
    with pytest.raises(ValueError):
        bm.BellmanParams(Q=0.5)
    with pytest.raises(ValueError):
        bm.BellmanParams(Q=10, c_drift=0)


def test_drift_matrix_branches(p10):
    assert np.all(bm.drift_matrix_analytic(0.5, 1.0, p10) == 0)
    # on the phi branch the ODE makes the corner entry vanish
    g, t = 10 / 0.2 * 0.99, 0.2
    assert np.abs(bm.drift_matrix_analytic(g, t, p10)).max() < 1e-14


def test_hessian_small_grid(p10):
    rep = bm.check_hessian_drift(p10, n=30)
    assert rep.passed and rep.stats["max_eig_fd"] <= 1e-8


def test_main_inequality_equality_and_linear_branch(p10):
    g = np.array([2.0, 5.0]); t = np.array([1.0, 0.5])
    gap = bm.main_inequality_gap_theta(g, t, g, t, p10)
    assert np.all(np.abs(gap) < 1e-15)
    big = bm.BellmanParams(Q=10, K=1e6)
    gap = bm.main_inequality_gap_theta(np.array([2.0]), np.array([1.0]), np.array([4.0]), np.array([2.0]), big)
    assert gap[0] >= 0


def test_main_inequality_detects_too_large_drift():
    rep = bm.check_main_inequality(bm.BellmanParams(Q=10, c_drift=1.0), samples=5000)
    assert not rep.passed and rep.violations
    assert bm.check_main_inequality(bm.BellmanParams(Q=10, c_drift=0.25), samples=5000).passed


def test_main_inequality_violations_replay():
    prm = bm.BellmanParams(Q=10, c_drift=1.0)
    rep = bm.check_main_inequality(prm, samples=2000, seed=5)
    v = next(x for x in rep.violations if "gamma_minus" in x)
    gap = bm.main_inequality_gap_theta(np.array([v["gamma_minus"]]), np.array([v["tau_minus"]]),
                                       np.array([v["gamma_plus"]]), np.array([v["tau_plus"]]), prm)
    assert gap[0] == v["gap"]


def test_obstacle(p10):
    assert bm.check_obstacle(p10).passed
    bad = bm.check_obstacle(bm.BellmanParams(Q=100, K=100, a0=0.01))
    assert not bad.passed and bad.violations
    assert bm.bfun(2.0, 1.0, 0.0, p10) == 2.0


def test_change_of_variables():
    assert bm.change_of_variables(3.0, 0.0) == (3.0, 0.0)
    G, T = bm.change_of_variables(2.0, 1.3)
    g, t = bm.inverse_change_of_variables(G, T)
    assert abs(g - 2.0) < 1e-12 and abs(t - 1.3) < 1e-12
    assert bm.check_change_of_variables(samples=40).passed


def test_line_concavity(p10):
    rep = bm.check_line_concavity(p10, samples=10, per_line=8)
    assert rep.passed and rep.stats["points"] > 0


def test_phi_inequality(p10):
    rep = bm.check_phi_inequality(p10, n=80, samples=5000)
    assert rep.passed
    assert rep.stats["empirical_tau0_star"] >= 0.001


def test_u_second_derivative_forms():
    for p, t in [(0.01, 1.0), (0.3, 0.7), (1.5, 2.0)]:
        g = lambda s: bm.phi_mp(p / mpmath.sqrt(s), 60) / mpmath.sqrt(s)
        with mpmath.workdps(60):
            ref = float(mpmath.diff(g, mpmath.mpf(t), 2, h=mpmath.mpf("1e-12")))
        assert abs(bm.u_second_derivative(p, t) / ref - 1) < 1e-10
    # the printed closed form is off by exactly 9/8 as x -> 0
    assert abs(bm.u_second_derivative_stated(1e-4, 1.0) / bm.u_second_derivative(1e-4, 1.0) - 9 / 8) < 1e-6


def test_u_inequality():
    rep = bm.check_U_inequality(samples=5000)
    assert rep.passed
    assert rep.stats["convexity_min_second_diff"] >= -1e-12
    assert rep.stats["derived_formula_agrees"]
    assert not rep.stats["ratio_bound_09_holds"] and rep.stats["ratio_bound_09_min"] > 0.99


def test_certificate_constant_weight():
    one = StepFunction([(DyadicInterval.from_path(p), 1.0) for p in ("0", "1")])
    c = bm.bellman_induction_certificate(one, 0.5, bm.BellmanParams(Q=1.5))
    assert c.actual == 0 and c.bound >= 0 and c.dominates


@pytest.mark.parametrize("k,levels", [(2, 3), (2, 6), (3, 2), (4, 2)])
def test_certificate_dominates(k, levels):
    aw = build_weight(solve_parameters(k).with_levels(levels), mode="float")
    prm = bm.default_params_for(aw.weight)
    s2 = sorted(v for _, v in square_function(pointwise(aw.weight, "invert")).leaves)
    for lam in [s2[len(s2) // 2], 0.05, 1.0, 30.0, 1e3]:
        if lam <= 0:
            continue
        c = bm.bellman_induction_certificate(aw, float(lam), prm)
        assert c.dominates and math.isfinite(c.bound)
        assert c.bound <= c.growth_bound * (1 + 1e-12)


def test_certificate_reports_node_on_failure():
    aw = build_weight(solve_parameters(2).with_levels(3), mode="float")
    prm = bm.BellmanParams(Q=float(5), c_drift=1.0, K=1e-3 * 5)
    with pytest.raises(bm.CertificateError, match="at"):
        for lam in [0.05, 0.2, 1.0, 5.0]:
            bm.bellman_induction_certificate(aw, lam, prm)


def test_homogeneity_report():
    assert bm.check_homogeneity_growth(bm.BellmanParams(Q=10), samples=2000).passed
