import itertools
import math

import numpy as np
import pytest
from scipy import optimize

from afarq import (
    PowerSchedule,
    RateSchedule,
    RecursionVariant,
    Scenario,
    SolverConfig,
    cumulative_outage,
    epa_power,
    gp_oracle,
    kkt_residuals,
    lambda_closed_form,
    opa_closed_form,
)
from afarq.opa import (
    InfeasibleBracketError,
    LogDomainProblem,
    OracleConvergenceError,
    ValidityRegionError,
    anchor_outage_map,
    central_difference,
    lambda_from_anchor,
)
from afarq.outage import round_constants

E2M1 = math.e ** 2 - 1
PAPER = SolverConfig(recursion_variant=RecursionVariant.PAPER_LITERAL)


def brute_force_two_rounds(sc, stats):
    """Minimize over P_1 alone; P_2 follows from E_2 = eps."""
    c1, c2 = round_constants(sc, stats)
    eps = sc.target_eps

    def objective(p1):
        p2 = math.sqrt(c1 * c2 / eps) / p1
        return p1 + p2 * c1 / p1 ** 2

    p1 = optimize.minimize_scalar(objective, bounds=(1e-3, 1e6), method="bounded",
                                  options={"xatol": 1e-12}).x
    return p1, math.sqrt(c1 * c2 / eps) / p1


@pytest.mark.parametrize("variant", list(RecursionVariant))
def test_single_round_equals_epa(stats, variant):
    sc = Scenario(M=1, eta=(1.0,), target_eps=1e-3)
    sched, rep = opa_closed_form(sc, stats, SolverConfig(recursion_variant=variant))
    assert sched.p[0] == pytest.approx(epa_power(sc, stats).p[0], rel=1e-12)
    assert sched.p[0] == pytest.approx(142.864, abs=1e-3)
    assert rep.max_stationarity < 1e-12


def test_two_rounds_against_brute_force(stats):
    sc = Scenario(M=2, eta=(1.0,), target_eps=1e-5)
    sched, rep = opa_closed_form(sc, stats)
    assert rep.relative_constraint_residual < 1e-9
    assert rep.max_stationarity < 1e-8
    assert sched.p == pytest.approx(brute_force_two_rounds(sc, stats), rel=1e-7)
    # frozen from the brute-force minimizer above
    assert sched.p == pytest.approx((18.0557877, 96.1356931), rel=1e-7)
    assert gp_oracle(sc, stats).p == pytest.approx(sched.p, rel=1e-6)


def test_cube_root_recursion_holds(stats):
    sc = Scenario(M=4, eta=(0.5, 1.0, 2.0, 1.0), target_eps=1e-7)
    sched, rep = opa_closed_form(sc, stats)
    c = round_constants(sc, stats)
    p = sched.p
    for m in range(3):
        assert p[m] ** 3 == pytest.approx(3 * c[m] * p[m + 1], rel=1e-12)
    assert rep.lam == pytest.approx(p[-1] ** 3 / (2 * c[-1]), rel=1e-14)
    assert rep.lam > 0


def test_paper_literal_recursion_holds_but_is_not_stationary(stats):
    sc = Scenario(M=3, eta=(1.0,), target_eps=1e-7)
    sched, rep = opa_closed_form(sc, stats, PAPER)
    c = round_constants(sc, stats)
    for m in range(2):
        assert sched.p[m] ** 2 == pytest.approx(3 * c[m] * sched.p[m + 1], rel=1e-12)
    assert rep.relative_constraint_residual < 1e-9
    assert rep.max_stationarity > 1e-3


def test_deep_reliability_schedule_increases(stats):
    sched, _ = opa_closed_form(Scenario(M=2, eta=(1.0,), target_eps=1e-9), stats)
    assert sched.p[0] < sched.p[1]


def test_kkt_single_round_algebra(stats):
    sc = Scenario(M=1, eta=(1.0,), target_eps=1e-3)
    p1 = E2M1 * math.sqrt(0.5 / 1e-3)
    sched = PowerSchedule((p1,))
    lam = 12345.0
    rep = kkt_residuals(sched, lam, sc, stats)
    eps1 = cumulative_outage(sched, sc, stats).eps_round[0]
    assert rep.stationarity_residual[0] == pytest.approx(1 - 2 * lam * eps1 / p1, rel=1e-14)
    lam_star = p1 ** 3 / (2 * E2M1 ** 2 * 0.5)
    assert abs(kkt_residuals(sched, lam_star, sc, stats).stationarity_residual[0]) < 1e-14
    assert rep.mu == (0.0,)


def test_kkt_residual_against_finite_differences(stats):
    # dL/dP_m of sum_m P_m E_{m-1} + lam (E_M - eps), differentiated numerically
    sc = Scenario(M=3, eta=(1.0, 2.0, 0.5), target_eps=1e-6)
    p = np.array([12.0, 30.0, 200.0])
    lam = 50.0

    def lagrangian(q):
        bd = cumulative_outage(PowerSchedule(tuple(q)), sc, stats)
        return sc.M * bd.p_avg + lam * (bd.total - sc.target_eps)

    fd = central_difference(lagrangian, p, h=1e-4)
    rep = kkt_residuals(PowerSchedule(tuple(p)), lam, sc, stats)
    np.testing.assert_allclose(rep.stationarity_residual, fd, rtol=1e-6)


@pytest.mark.parametrize("M, eps", [(2, 1e-3), (3, 1e-5), (4, 1e-9)])
def test_epa_is_not_stationary(stats, M, eps):
    sc = Scenario(M=M, eta=(1.0,), target_eps=eps)
    epa = epa_power(sc, stats)
    rep = kkt_residuals(epa, lambda_from_anchor(epa.p[-1], sc, stats), sc, stats)
    assert rep.max_stationarity > 1e-8


def test_oracle_single_round_closed_form(stats):
    sc = Scenario(M=1, eta=(2.0,), target_eps=1e-6)
    assert gp_oracle(sc, stats).p[0] == pytest.approx(E2M1 * math.sqrt(0.375 / 1e-6), rel=1e-10)


@pytest.mark.parametrize("M, eps, eta", list(itertools.product([2, 3], [1e-3, 1e-6, 1e-9], [1.0, 2.0])))
def test_oracle_matches_closed_form(stats, M, eps, eta):
    sc = Scenario(M=M, eta=(eta,), target_eps=eps)
    sched, _ = opa_closed_form(sc, stats)
    orc = gp_oracle(sc, stats)
    np.testing.assert_allclose(orc.p, sched.p, rtol=1e-6)
    p_orc = cumulative_outage(orc, sc, stats).p_avg
    p_epa = cumulative_outage(epa_power(sc, stats), sc, stats).p_avg
    assert p_orc < p_epa


def test_oracle_gradient_and_hessian(stats):
    rng = np.random.default_rng(0)
    for M in (2, 3, 5):
        prob = LogDomainProblem(Scenario(M=M, eta=(1.0,), target_eps=1e-6), stats)
        for _ in range(5):
            y = prob.start() + rng.normal(0, 0.5, M - 1)
            g = prob.gradient(y)
            assert np.max(np.abs(g - central_difference(prob.objective, y))) < 1e-6 * np.max(np.abs(g))
            H_fd = np.column_stack([central_difference(lambda z: prob.gradient(z)[i], y)
                                    for i in range(M - 1)])
            np.testing.assert_allclose(prob.hessian(y), H_fd, rtol=1e-5, atol=1e-8)


def test_oracle_objective_is_convex_along_lines(stats):
    prob = LogDomainProblem(Scenario(M=4, eta=(1.0,), target_eps=1e-7), stats)
    rng = np.random.default_rng(1)
    for _ in range(50):
        a, b = prob.start() + rng.normal(0, 1, (2, 3))
        t = rng.uniform()
        assert prob.objective(t * a + (1 - t) * b) <= t * prob.objective(a) + (1 - t) * prob.objective(b) + 1e-12


def test_oracle_reports_nonconvergence(stats):
    sc = Scenario(M=3, eta=(1.0,), target_eps=1e-9)
    with pytest.raises(OracleConvergenceError):
        gp_oracle(sc, stats, SolverConfig(max_iters=1))


@pytest.mark.parametrize("sch, variant", list(itertools.product(RateSchedule, RecursionVariant)))
def test_anchor_map_strictly_decreasing(stats, sch, variant):
    for M, eps, eta in itertools.product([2, 3, 4], [1e-3, 1e-9], [0.5, 2.0]):
        sc = Scenario(M=M, eta=(eta,), target_eps=eps, rate_schedule=sch)
        f = anchor_outage_map(sc, stats, variant)
        grid = epa_power(sc, stats).p[0] * np.logspace(-3, 3, 61)
        vals = np.array([f(p) for p in grid])
        assert np.all(np.diff(vals) < 0)


def test_loose_target_hits_validity_region(stats):
    sc = Scenario(M=3, eta=(1.0,), target_eps=0.1, rate_schedule=RateSchedule.TYPE_I_CONSTANT)
    with pytest.raises(ValidityRegionError):
        opa_closed_form(sc, stats, PAPER)


def test_bracket_failure_is_reported(stats, monkeypatch):
    import afarq.opa as opa
    sc = Scenario(M=2, eta=(1.0,), target_eps=1e-5)
    monkeypatch.setattr(opa, "_log_total_outage", lambda x, log_c: 1.0)
    with pytest.raises(InfeasibleBracketError):
        opa_closed_form(sc, stats, SolverConfig(max_iters=5))


def test_lambda_formula_diagnostics(stats):
    for M in (1, 2, 3, 4):
        sc = Scenario(M=M, eta=(1.0,), target_eps=1e-5)
        _, rep = opa_closed_form(sc, stats)
        # with the outer exponent inverted the explicit formula reproduces bisection
        assert lambda_closed_form(sc, stats, "inverted") == pytest.approx(rep.lam, rel=1e-9)
        # the printed exponent does not; the discrepancy is many orders of magnitude
        ratio = lambda_closed_form(sc, stats) / rep.lam
        assert not 0.5 < ratio < 2.0
    with pytest.raises(ValueError):
        lambda_closed_form(sc, stats, "other")


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(kkt_tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(max_iters=0)
    with pytest.raises(ValueError):
        SolverConfig(recursion_variant="cubic")
