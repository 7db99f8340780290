"""Machine-readable validation report.

Each check is a flat record (name, passed, value, threshold, context) so the
report can be dumped as JSON and diffed between runs.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable

import numpy as np

from afarq.fading import ChannelStats
from afarq.montecarlo import (
    SimConfig,
    deviation_trend,
    power_for_outage,
    small_ball_slope,
    validate_asymptotic,
)
from afarq.opa import (
    LogDomainProblem,
    RecursionVariant,
    SolverConfig,
    SolverError,
    central_difference,
    gp_oracle,
    kkt_residuals,
    lambda_from_anchor,
    opa_closed_form,
)
from afarq.outage import PowerSchedule, RateSchedule, Scenario, cumulative_outage, epa_power

CONSTRAINT_TOL = 1e-9
ORACLE_TOL = 1e-6
GRADIENT_TOL = 1e-6
ASYMPTOTIC_RATIO_TOL = 0.30
ASYMPTOTIC_EPS = (1e-1, 1e-2, 1e-3)
ASYMPTOTIC_MIN_FAILURES = 100_000
SLOPE_SAMPLES = 10_000_000
SLOPE_POINTS = (1e-2, 1e-3)

GRID_M = (2, 3, 4)
GRID_EPS = (1e-3, 1e-5, 1e-7, 1e-9)
GRID_ETA = (0.5, 1.0, 2.0)


@dataclass
class Check:
    name: str
    passed: bool
    value: float | None = None
    threshold: float | None = None
    context: dict = field(default_factory=dict)


@dataclass
class Report:
    checks: list[Check] = field(default_factory=list)
    variant_comparison: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, *args, **kwargs) -> Check:
        c = Check(*args, **kwargs)
        self.checks.append(c)
        return c

    def to_dict(self) -> dict:
        return {"passed": self.passed,
                "checks": [asdict(c) for c in self.checks],
                "variant_comparison": self.variant_comparison}

    def summary_lines(self) -> list[str]:
        lines = []
        for c in self.checks:
            ctx = " ".join(f"{k}={v}" for k, v in c.context.items())
            val = "" if c.value is None else f" value={c.value:.3g}"
            thr = "" if c.threshold is None else f" threshold={c.threshold:.3g}"
            lines.append(f"{'PASS' if c.passed else 'FAIL'} {c.name}{val}{thr} {ctx}".rstrip())
        n_fail = sum(not c.passed for c in self.checks)
        lines.append(f"{len(self.checks) - n_fail}/{len(self.checks)} checks passed")
        return lines


def _ctx(scenario: Scenario) -> dict:
    eta = scenario.eta[0] if len(set(scenario.eta)) == 1 else list(scenario.eta)
    return {"M": scenario.M, "eps": scenario.target_eps, "eta": eta,
            "rate_schedule": scenario.rate_schedule.value}


def check_schedule(report: Report, schedule: PowerSchedule, scenario: Scenario,
                   stats: ChannelStats, solver: SolverConfig, label: str = "schedule") -> None:
    """Constraint and stationarity checks for an arbitrary schedule."""
    ctx = _ctx(scenario)
    kkt = kkt_residuals(schedule, lambda_from_anchor(schedule.p[-1], scenario, stats), scenario, stats)
    report.add(f"{label}.constraint", kkt.relative_constraint_residual < CONSTRAINT_TOL,
               kkt.relative_constraint_residual, CONSTRAINT_TOL, ctx)
    report.add(f"{label}.stationarity", kkt.max_stationarity < solver.kkt_tol,
               kkt.max_stationarity, solver.kkt_tol, ctx)


def gradient_error(scenario: Scenario, stats: ChannelStats, rng: np.random.Generator,
                   n_points: int = 3) -> float:
    """Worst relative error of the oracle's analytic gradient against central
    differences at random points around the equal-power start."""
    prob = LogDomainProblem(scenario, stats)
    if prob.M == 1:
        return 0.0
    worst = 0.0
    for _ in range(n_points):
        y = prob.start() + rng.normal(0.0, 0.5, prob.M - 1)
        g = prob.gradient(y)
        fd = central_difference(prob.objective, y)
        worst = max(worst, float(np.max(np.abs(g - fd)) / max(np.max(np.abs(g)), 1e-300)))
    return worst


def check_grid_point(report: Report, scenario: Scenario, stats: ChannelStats,
                     solver: SolverConfig, rng: np.random.Generator) -> None:
    ctx = _ctx(scenario)
    kkt_cfg = replace(solver, recursion_variant=RecursionVariant.KKT_DERIVED)
    try:
        schedule, kkt = opa_closed_form(scenario, stats, kkt_cfg)
    except SolverError as exc:
        report.add("opa.solve", False, context={**ctx, "error": str(exc)})
        return
    report.add("opa.constraint", kkt.relative_constraint_residual < CONSTRAINT_TOL,
               kkt.relative_constraint_residual, CONSTRAINT_TOL, ctx)
    report.add("opa.stationarity", kkt.max_stationarity < solver.kkt_tol,
               kkt.max_stationarity, solver.kkt_tol, ctx)
    report.add("opa.multiplier_positive", kkt.lam > 0, kkt.lam, 0.0, ctx)

    try:
        oracle = gp_oracle(scenario, stats, solver)
        rel = float(np.max(np.abs(np.array(oracle.p) / np.array(schedule.p) - 1.0)))
        report.add("oracle.agreement", rel < ORACLE_TOL, rel, ORACLE_TOL, ctx)
    except SolverError as exc:
        report.add("oracle.agreement", False, context={**ctx, "error": str(exc)})
    gerr = gradient_error(scenario, stats, rng)
    report.add("oracle.gradient", gerr < GRADIENT_TOL, gerr, GRADIENT_TOL, ctx)

    p_opa = cumulative_outage(schedule, scenario, stats).p_avg
    p_epa = cumulative_outage(epa_power(scenario, stats), scenario, stats).p_avg
    strict = scenario.M >= 2
    dominated = p_opa < p_epa if strict else p_opa <= p_epa * (1 + 1e-12)
    report.add("opa.dominates_epa", dominated, p_epa / p_opa - 1.0, 0.0,
               {**ctx, "p_avg_opa": p_opa, "p_avg_epa": p_epa})

    row = {**ctx, "kkt_objective": p_opa, "kkt_max_residual": kkt.max_stationarity,
           "kkt_constraint_ok": kkt.relative_constraint_residual < CONSTRAINT_TOL}
    paper_cfg = replace(solver, recursion_variant=RecursionVariant.PAPER_LITERAL)
    try:
        p_sched, p_kkt = opa_closed_form(scenario, stats, paper_cfg)
        row.update(paper_objective=cumulative_outage(p_sched, scenario, stats).p_avg,
                   paper_max_residual=p_kkt.max_stationarity,
                   paper_constraint_ok=p_kkt.relative_constraint_residual < CONSTRAINT_TOL,
                   paper_error=None)
    except SolverError as exc:
        row.update(paper_objective=None, paper_max_residual=None, paper_constraint_ok=False,
                   paper_error=str(exc))
    report.variant_comparison.append(row)
    if row["kkt_constraint_ok"] and row["paper_constraint_ok"]:
        report.add("variants.kkt_not_worse", row["kkt_objective"] <= row["paper_objective"],
                   row["kkt_objective"] / row["paper_objective"], 1.0, ctx)


def check_monte_carlo(report: Report, scenario: Scenario, stats: ChannelStats, sim: SimConfig,
                      min_failures: int = ASYMPTOTIC_MIN_FAILURES,
                      slope_samples: int = SLOPE_SAMPLES) -> None:
    eta = scenario.eta[0]
    grid = [power_for_outage(e, eta, scenario.rate, stats) for e in ASYMPTOTIC_EPS]
    points = validate_asymptotic(grid, eta, scenario.rate, stats, sim, min_failures=min_failures)
    for q in points:
        report.add("mc.asymptotic_ratio", q.flagged or q.deviation < ASYMPTOTIC_RATIO_TOL,
                   q.ratio, ASYMPTOTIC_RATIO_TOL,
                   {"P": q.p, "eps_formula": q.eps_formula, "trials": q.sim.trials,
                    "ratio_halfwidth": q.ratio_halfwidth})
    slope = deviation_trend(points)
    report.add("mc.asymptotic_trend", slope < 0, slope, 0.0,
               {"deviations": [q.deviation for q in points]})

    rate_x = 1.0 / stats.sigma2_sd
    for sp in small_ball_slope(rate_x, SLOPE_POINTS, slope_samples, seed=sim.seed):
        report.add("mc.small_ball_slope", sp.within(rate_x), sp.slope_hat, rate_x,
                   {"g": sp.g, "stderr": sp.stderr})


def default_grid(scenario: Scenario, schedules: Iterable[RateSchedule] = tuple(RateSchedule)):
    for sch, M, eps, eta in itertools.product(schedules, GRID_M, GRID_EPS, GRID_ETA):
        yield Scenario(M=M, rate=scenario.rate, eta=(eta,), target_eps=eps, rate_schedule=sch)


def run_validation(scenario: Scenario, stats: ChannelStats, solver: SolverConfig, sim: SimConfig,
                   schedule: PowerSchedule | None = None, monte_carlo: bool = True,
                   grid: bool = True, min_failures: int = ASYMPTOTIC_MIN_FAILURES) -> Report:
    report = Report()
    rng = np.random.default_rng(sim.seed)
    if schedule is not None:
        check_schedule(report, schedule, scenario, stats, solver, label="supplied")
        return report
    check_grid_point(report, scenario, stats, solver, rng)
    if grid:
        for sc in default_grid(scenario):
            check_grid_point(report, sc, stats, solver, rng)
    if monte_carlo:
        check_monte_carlo(report, scenario, stats, sim, min_failures=min_failures)
    return report
