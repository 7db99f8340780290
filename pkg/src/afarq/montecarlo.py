"""Monte Carlo validation of the outage model.

Trials are split into fixed-size chunks, and chunk ``k`` of stream ``s`` always
draws from ``SeedSequence(seed, spawn_key=(s, k))``. The number of workers only
decides who evaluates which chunk, and chunk results are integer counts, so the
outcome for a given seed does not depend on ``workers``.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from statsmodels.stats.proportion import proportion_confint

from afarq.fading import ChannelStats, RoundPowers, outage_indicator, sample_gains
from afarq.outage import (
    PowerSchedule,
    Scenario,
    outside_validity,
    phi_factor,
    round_outage_closed_form,
)

WILSON_BELOW = 30


@dataclass(frozen=True)
class SimConfig:
    trials: int = 1_000_000
    seed: int = 0
    workers: int = 1
    chunk_size: int = 1 << 20

    def __post_init__(self):
        for name in ("trials", "workers", "chunk_size"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")


@dataclass(frozen=True)
class SimResult:
    trials: int
    failures: int
    eps_hat: float
    ci_low: float
    ci_high: float
    ci_halfwidth: float
    avg_power_hat: float
    attempts_histogram: tuple[int, ...]  # successes in round 1..M, then failures


def binomial_ci(failures: int, trials: int) -> tuple[float, float]:
    """95% interval: normal approximation, Wilson when failures are scarce."""
    method = "wilson" if failures < WILSON_BELOW else "normal"
    lo, hi = proportion_confint(failures, trials, alpha=0.05, method=method)
    return max(0.0, float(lo)), min(1.0, float(hi))


def _chunk_histogram(task) -> np.ndarray:
    seed, stream, index, n, round_powers, rate, stats = task
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream, index))))
    hist = np.zeros(len(round_powers) + 1, dtype=np.int64)
    alive = n
    for m, powers in enumerate(round_powers):
        if alive == 0:
            break
        failed = int(np.count_nonzero(outage_indicator(sample_gains(stats, rng, alive), powers, rate)))
        hist[m] = alive - failed
        alive = failed
    hist[-1] = alive
    return hist


def _run(round_powers: Sequence[RoundPowers], rate: float, stats: ChannelStats,
         sim: SimConfig, stream: int = 0) -> np.ndarray:
    n_chunks = -(-sim.trials // sim.chunk_size)
    tasks = []
    for k in range(n_chunks):
        n = min(sim.chunk_size, sim.trials - k * sim.chunk_size)
        tasks.append((sim.seed, stream, k, n, tuple(round_powers), rate, stats))
    if sim.workers == 1 or n_chunks == 1:
        parts = map(_chunk_histogram, tasks)
        return np.sum(list(parts), axis=0)
    with ProcessPoolExecutor(max_workers=sim.workers) as pool:
        return np.sum(list(pool.map(_chunk_histogram, tasks)), axis=0)


def _result(hist: np.ndarray, source_powers: Sequence[float], trials: int) -> SimResult:
    M = len(source_powers)
    failures = int(hist[-1])
    lo, hi = binomial_ci(failures, trials)
    reached = trials - np.concatenate([[0], np.cumsum(hist[:-1])[:-1]])
    avg_power = float(np.dot(source_powers, reached)) / (M * trials)
    return SimResult(
        trials=trials,
        failures=failures,
        eps_hat=failures / trials,
        ci_low=lo,
        ci_high=hi,
        ci_halfwidth=(hi - lo) / 2,
        avg_power_hat=avg_power,
        attempts_histogram=tuple(int(h) for h in hist),
    )


def estimate_round_outage(powers: RoundPowers, rate: float, stats: ChannelStats,
                          sim: SimConfig, stream: int = 0) -> SimResult:
    hist = _run([powers], rate, stats, sim, stream)
    return _result(hist, [powers.p_source], sim.trials)


def simulate_protocol(schedule: PowerSchedule, scenario: Scenario, stats: ChannelStats,
                      sim: SimConfig, stream: int = 0) -> SimResult:
    """Type-I ARQ: every round decodes from its own fresh fading realization
    and declares success when the round's mutual information reaches
    ``scenario.rate``. Packets still failing after round M count as failures."""
    if len(schedule) != scenario.M:
        raise ValueError("schedule length does not match scenario.M")
    round_powers = [RoundPowers(p, e * p) for p, e in zip(schedule.p, scenario.eta)]
    hist = _run(round_powers, scenario.rate, stats, sim, stream)
    return _result(hist, schedule.p, sim.trials)


@dataclass(frozen=True)
class AsymptoticPoint:
    p: float
    eps_formula: float
    flagged: bool  # closed form >= 1, ratio meaningless
    sim: SimResult

    @property
    def ratio(self) -> float:
        return self.sim.eps_hat / self.eps_formula

    @property
    def deviation(self) -> float:
        return abs(self.ratio - 1.0)

    @property
    def ratio_halfwidth(self) -> float:
        return self.sim.ci_halfwidth / self.eps_formula


def validate_asymptotic(p_grid: Sequence[float], eta: float, rate: float, stats: ChannelStats,
                        sim: SimConfig, min_failures: int | None = None) -> list[AsymptoticPoint]:
    """Simulate one round at each source power and compare with the closed form.

    The per-round threshold is ``exp(2 rate) - 1`` (round index 1), and every
    grid point draws from its own substream. With ``min_failures`` set, a point
    runs ``max(sim.trials, min_failures / eps_formula)`` trials so that the
    relative error of each ratio is about ``1/sqrt(min_failures)``.
    """
    if any(b <= a for a, b in zip(p_grid, p_grid[1:])):
        raise ValueError("p_grid must be strictly increasing")
    phi = phi_factor(1, rate)
    points = []
    for i, p in enumerate(p_grid):
        eps_f = round_outage_closed_form(p, eta, phi, stats)
        cfg = sim
        if min_failures and not outside_validity(eps_f):
            # round first so 20000 / 0.1 does not become 200001
            needed = math.ceil(round(min_failures / eps_f, 6))
            cfg = replace(sim, trials=max(sim.trials, needed))
        res = estimate_round_outage(RoundPowers(p, eta * p), rate, stats, cfg, stream=i + 1)
        points.append(AsymptoticPoint(p=float(p), eps_formula=eps_f,
                                      flagged=outside_validity(eps_f), sim=res))
    return points


def deviation_trend(points: Sequence[AsymptoticPoint]) -> float:
    """Least-squares slope of ``|ratio - 1|`` against ``log10 P`` over the
    unflagged points; negative means the closed form is being approached."""
    pts = [q for q in points if not q.flagged]
    if len(pts) < 2:
        raise ValueError("need at least two points inside the validity region")
    x = np.log10([q.p for q in pts])
    y = np.array([q.deviation for q in pts])
    return float(np.polyfit(x, y, 1)[0])


def power_for_outage(eps: float, eta: float, rate: float, stats: ChannelStats) -> float:
    """Source power at which the closed-form single-round outage equals ``eps``."""
    from afarq.outage import psi_factor

    return phi_factor(1, rate) * math.sqrt(psi_factor(eta, stats) / eps)


@dataclass(frozen=True)
class SlopePoint:
    g: float
    p_hat: float
    slope_hat: float
    stderr: float

    def within(self, rate_param: float, n_sigma: float = 3.0) -> bool:
        return abs(self.slope_hat - rate_param) <= n_sigma * self.stderr


def small_ball_slope(rate_param: float, g_values: Sequence[float], samples: int,
                     seed: int = 0, chunk_size: int = 1 << 22) -> list[SlopePoint]:
    """Estimate ``P(X < g) / g`` for ``X ~ Exp(rate_param)``.

    For small ``g`` this tends to ``rate_param``; the standard error is the
    binomial one scaled by ``1/g``.
    """
    g_values = np.asarray(g_values, dtype=float)
    counts = np.zeros(g_values.size, dtype=np.int64)
    done, k = 0, 0
    while done < samples:
        n = min(chunk_size, samples - done)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(k,))))
        x = rng.exponential(1.0 / rate_param, n)
        counts += np.array([np.count_nonzero(x < g) for g in g_values])
        done += n
        k += 1
    out = []
    for g, c in zip(g_values, counts):
        p = c / samples
        out.append(SlopePoint(g=float(g), p_hat=p, slope_hat=p / g,
                              stderr=math.sqrt(p * (1 - p) / samples) / g))
    return out
