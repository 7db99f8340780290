"""Optimal power allocation across ARQ rounds.

Every round's outage is written as ``eps_m = c_m / P_m**2`` with
``c_m = phi_m**2 * psi(eta_m)``. Minimizing ``sum_m P_m E_{m-1}`` subject to
``E_M = eps`` then gives the backward recursion ``P_m**3 = 3 c_m P_{m+1}``
with ``P_M**3 = 2 lambda c_M``. The anchor ``P_M`` is pinned by bisection on
the outage constraint.

:func:`gp_oracle` solves the same problem independently as a convex program in
``x = log P`` and never touches the recursion.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from afarq.fading import ChannelStats
from afarq.outage import (
    PowerSchedule,
    Scenario,
    cumulative_outage,
    epa_power,
    round_constants,
)

log = logging.getLogger(__name__)


class RecursionVariant(str, enum.Enum):
    KKT_DERIVED = "kkt"  # cube root, the stationary solution
    PAPER_LITERAL = "paper"  # square-root form of the recursion


class SolverError(RuntimeError):
    pass


class InfeasibleBracketError(SolverError):
    pass


class ValidityRegionError(SolverError):
    """The solution has a round whose high-SNR outage estimate is >= 1."""


class OracleConvergenceError(SolverError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    bisection_tol: float = 1e-12
    kkt_tol: float = 1e-8
    oracle_grad_tol: float = 1e-10
    max_iters: int = 200
    recursion_variant: RecursionVariant = RecursionVariant.KKT_DERIVED

    def __post_init__(self):
        for name in ("bisection_tol", "kkt_tol", "oracle_grad_tol"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v!r}")
        if isinstance(self.max_iters, bool) or not isinstance(self.max_iters, int) or self.max_iters < 1:
            raise ValueError(f"max_iters must be a positive integer, got {self.max_iters!r}")
        object.__setattr__(self, "recursion_variant", RecursionVariant(self.recursion_variant))


@dataclass(frozen=True)
class KktReport:
    lam: float
    mu: tuple[float, ...]
    stationarity_residual: tuple[float, ...]
    constraint_residual: float  # E_M - eps
    target_eps: float

    @property
    def max_stationarity(self) -> float:
        return max(abs(r) for r in self.stationarity_residual)

    @property
    def relative_constraint_residual(self) -> float:
        return abs(self.constraint_residual) / self.target_eps

    def satisfied(self, kkt_tol: float = 1e-8, constraint_tol: float = 1e-9) -> bool:
        return (self.max_stationarity < kkt_tol
                and self.relative_constraint_residual < constraint_tol)


def _backward(log_anchor: float, log_c: np.ndarray, variant: RecursionVariant) -> np.ndarray:
    """Log-powers from the anchor ``log P_M`` down to round 1."""
    root = 3.0 if variant is RecursionVariant.KKT_DERIVED else 2.0
    x = np.empty_like(log_c)
    x[-1] = log_anchor
    for m in range(len(log_c) - 2, -1, -1):
        x[m] = (math.log(3.0) + log_c[m] + x[m + 1]) / root
    return x


def _log_total_outage(x: np.ndarray, log_c: np.ndarray) -> float:
    return float(np.sum(log_c - 2.0 * x))


def anchor_outage_map(scenario: Scenario, stats: ChannelStats,
                      variant: RecursionVariant = RecursionVariant.KKT_DERIVED):
    """Return ``P_M -> E_M`` with the recursion applied backward from ``P_M``.

    Bisection relies on this map being strictly decreasing.
    """
    log_c = np.log(round_constants(scenario, stats))
    variant = RecursionVariant(variant)

    def total_outage(p_anchor: float) -> float:
        return math.exp(_log_total_outage(_backward(math.log(p_anchor), log_c, variant), log_c))

    return total_outage


def lambda_from_anchor(p_anchor: float, scenario: Scenario, stats: ChannelStats) -> float:
    c_last = round_constants(scenario, stats)[-1]
    return p_anchor ** 3 / (2.0 * c_last)


def kkt_residuals(schedule: PowerSchedule, lam: float, scenario: Scenario,
                  stats: ChannelStats) -> KktReport:
    """Gradient of the Lagrangian (1/M dropped, mu fixed at zero).

    ``dL/dP_m = E_{m-1} - (2/P_m) * (sum_{j>m} P_j E_{j-1} + lam * E_M)``
    """
    if len(schedule) != scenario.M:
        raise ValueError("schedule length does not match scenario.M")
    bd = cumulative_outage(schedule, scenario, stats)
    p = np.array(schedule.p)
    E = np.array(bd.cumulative)
    weighted = p * E[:-1]
    # tail[m] = sum_{j>m} P_j E_{j-1}
    tail = np.concatenate([np.cumsum(weighted[::-1])[::-1][1:], [0.0]])
    resid = E[:-1] - 2.0 / p * (tail + lam * E[-1])
    return KktReport(
        lam=float(lam),
        mu=(0.0,) * scenario.M,
        stationarity_residual=tuple(float(r) for r in resid),
        constraint_residual=float(E[-1] - scenario.target_eps),
        target_eps=scenario.target_eps,
    )


def opa_closed_form(scenario: Scenario, stats: ChannelStats,
                    config: SolverConfig = SolverConfig()) -> tuple[PowerSchedule, KktReport]:
    variant = config.recursion_variant
    log_c = np.log(round_constants(scenario, stats))
    log_eps = math.log(scenario.target_eps)

    def gap(t):
        return _log_total_outage(_backward(t, log_c, variant), log_c) - log_eps

    p_epa = epa_power(scenario, stats).p[0]
    step = math.log(1e3)
    lo, hi = math.log(p_epa) - step, math.log(p_epa) + step
    for _ in range(config.max_iters):
        g_lo, g_hi = gap(lo), gap(hi)
        if g_lo > 0 > g_hi:
            break
        if g_lo <= 0:
            lo -= step
        if g_hi >= 0:
            hi += step
        step *= 2
    else:
        raise InfeasibleBracketError(f"no sign change for the anchor power around {p_epa:.4g}")

    # absolute tolerance on log P_M is a relative tolerance on P_M
    t = optimize.bisect(gap, lo, hi, xtol=config.bisection_tol, rtol=4 * np.finfo(float).eps,
                        maxiter=max(config.max_iters, 200))
    schedule = PowerSchedule(tuple(np.exp(_backward(t, log_c, variant))))

    bd = cumulative_outage(schedule, scenario, stats)
    if not bd.valid:
        raise ValidityRegionError(
            f"rounds {list(bd.flagged_rounds)} have closed-form outage >= 1 "
            f"(eps_round={bd.eps_round}); target {scenario.target_eps:g} is too loose")
    report = kkt_residuals(schedule, lambda_from_anchor(schedule.p[-1], scenario, stats),
                           scenario, stats)
    return schedule, report


class LogDomainProblem:
    """The allocation problem in ``x = log P`` with the constraint eliminated.

    With ``x_M = K - sum_{m<M} x_m`` (``K`` from the affine outage constraint),
    the reduced variables ``y = x_1..x_{M-1}`` are unconstrained and the
    objective ``log sum_m exp(B y + d)_m`` is convex.
    """

    def __init__(self, scenario: Scenario, stats: ChannelStats):
        self.M = scenario.M
        log_c = np.log(round_constants(scenario, stats))
        M = self.M
        self.K = (np.sum(log_c) - math.log(scenario.target_eps)) / 2.0
        # exponent of term m: x_m + sum_{i<m} (log_c_i - 2 x_i)
        A = np.eye(M) - 2.0 * np.tril(np.ones((M, M)), -1)
        b = np.concatenate([[0.0], np.cumsum(log_c)[:-1]])
        T = np.vstack([np.eye(M - 1), -np.ones((1, M - 1))])
        t = np.zeros(M)
        t[-1] = self.K
        self.B = A @ T
        self.d = A @ t + b

    def log_powers(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.append(y, self.K - y.sum())

    def objective(self, y) -> float:
        """Log of ``sum_m P_m E_{m-1}``."""
        return float(special.logsumexp(self.B @ np.asarray(y, dtype=float) + self.d))

    def gradient(self, y) -> np.ndarray:
        w = special.softmax(self.B @ np.asarray(y, dtype=float) + self.d)
        return self.B.T @ w

    def hessian(self, y) -> np.ndarray:
        w = special.softmax(self.B @ np.asarray(y, dtype=float) + self.d)
        return self.B.T @ (np.diag(w) - np.outer(w, w)) @ self.B

    def start(self) -> np.ndarray:
        return np.full(self.M - 1, self.K / self.M)


def central_difference(f, y, h: float = 1e-5) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    g = np.empty_like(y)
    for i in range(y.size):
        e = np.zeros_like(y)
        e[i] = h
        g[i] = (f(y + e) - f(y - e)) / (2 * h)
    return g


def gp_oracle(scenario: Scenario, stats: ChannelStats,
              config: SolverConfig = SolverConfig()) -> PowerSchedule:
    """Solve the allocation problem by damped Newton descent in the log domain.

    Each step is backtracked until the objective does not increase, so the
    iterates decrease monotonically; iteration stops once the gradient norm
    drops below ``config.oracle_grad_tol``.
    """
    prob = LogDomainProblem(scenario, stats)
    if prob.M == 1:
        return PowerSchedule((math.exp(prob.K),))

    y = prob.start()
    f = prob.objective(y)
    for it in range(config.max_iters):
        g = prob.gradient(y)
        if np.linalg.norm(g) < config.oracle_grad_tol:
            log.debug("gp_oracle converged in %d iterations", it)
            return PowerSchedule(tuple(np.exp(prob.log_powers(y))))
        try:
            step = -np.linalg.solve(prob.hessian(y), g)
        except np.linalg.LinAlgError:
            step = -g
        slope = float(g @ step)
        if not slope < 0:
            step, slope = -g, -float(g @ g)
        alpha = 1.0
        while True:
            y_new = y + alpha * step
            f_new = prob.objective(y_new)
            # roundoff floor: near the optimum the Armijo decrease is below one ulp of f
            if f_new <= f + 1e-4 * alpha * slope or (f_new <= f and alpha == 1.0):
                break
            alpha *= 0.5
            if alpha < 1e-12:
                raise OracleConvergenceError(
                    f"line search stalled at |grad|={np.linalg.norm(g):.3g}")
        y, f = y_new, f_new
    raise OracleConvergenceError(
        f"no convergence in {config.max_iters} iterations (|grad|={np.linalg.norm(prob.gradient(y)):.3g})")


def lambda_closed_form(scenario: Scenario, stats: ChannelStats, exponent: str = "printed") -> float:
    """Evaluate the explicit product formula for the multiplier (diagnostic).

    ``exponent="printed"`` raises the ratio to ``k = -2 sum_m p(m)`` as
    printed; ``"inverted"`` uses ``1 / (2 sum_m p(m))``, which is what solving
    the outage constraint for ``lambda`` actually yields. The inner exponent
    ``q`` is read as depending on the product index ``i``.
    """
    M = scenario.M
    c = round_constants(scenario, stats)
    m_idx = np.arange(1, M + 1)
    p = 1.0 / 3.0 ** (M - m_idx + 1)
    o = np.array([sum(3.0 ** -i for i in range(1, M - m + 1)) for m in m_idx])
    log_inner = np.array([
        sum(math.log(c[i - 1]) / 3.0 ** (i - m + 1) for i in range(m, M + 1)) for m in m_idx
    ])
    log_ratio = (np.sum(np.log(c)) - math.log(scenario.target_eps)
                 - np.sum(2 * p * math.log(2.0) + 2 * o * math.log(3.0) + 2 * log_inner))
    if exponent == "printed":
        k = -2.0 * np.sum(p)
    elif exponent == "inverted":
        k = 1.0 / (2.0 * np.sum(p))
    else:
        raise ValueError(f"exponent must be 'printed' or 'inverted', got {exponent!r}")
    return float(math.exp(k * log_ratio))
