"""Closed-form outage quantities for AF-ARQ.

Per-round outage follows the high-SNR expression
``eps_m = psi(eta_m) * (phi_m / P_m)**2``; it is only meaningful while it is
below 1, and values at or above 1 are flagged rather than clipped.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from afarq.fading import ChannelStats


class RateSchedule(str, enum.Enum):
    """How the threshold term phi_m depends on the round index.

    ``PAPER_LITERAL`` uses ``exp(2R/m) - 1``; ``TYPE_I_CONSTANT`` uses
    ``exp(2R) - 1`` in every round, which is what memoryless per-round decoding
    implies.
    """

    PAPER_LITERAL = "paper"
    TYPE_I_CONSTANT = "type1"


@dataclass(frozen=True)
class Scenario:
    M: int
    rate: float = 1.0
    eta: tuple[float, ...] = (1.0,)
    target_eps: float = 1e-3
    rate_schedule: RateSchedule = RateSchedule.PAPER_LITERAL

    def __post_init__(self):
        if isinstance(self.M, bool) or not isinstance(self.M, (int, np.integer)) or self.M < 1:
            raise ValueError(f"M must be a positive integer, got {self.M!r}")
        if not (math.isfinite(self.rate) and self.rate > 0):
            raise ValueError(f"rate must be positive, got {self.rate!r}")
        eta = self.eta
        if np.isscalar(eta):
            eta = (float(eta),) * self.M
        eta = tuple(float(e) for e in eta)
        if len(eta) == 1 and self.M > 1:
            eta = eta * self.M
        if len(eta) != self.M:
            raise ValueError(f"eta needs {self.M} entries, got {len(eta)}")
        if not all(math.isfinite(e) and e > 0 for e in eta):
            raise ValueError(f"eta entries must be positive, got {eta!r}")
        object.__setattr__(self, "eta", eta)
        if not 0 < self.target_eps < 1:
            raise ValueError(f"target_eps must lie in (0, 1), got {self.target_eps!r}")
        object.__setattr__(self, "rate_schedule", RateSchedule(self.rate_schedule))


@dataclass(frozen=True)
class PowerSchedule:
    """Source SNR per round; the relay transmits ``eta_m * p[m]``."""

    p: tuple[float, ...]

    def __post_init__(self):
        p = tuple(float(v) for v in self.p)
        if not p:
            raise ValueError("empty power schedule")
        if not all(math.isfinite(v) and v > 0 for v in p):
            raise ValueError(f"powers must be positive and finite, got {p!r}")
        object.__setattr__(self, "p", p)

    def __len__(self):
        return len(self.p)

    def relay_powers(self, scenario: Scenario) -> tuple[float, ...]:
        return tuple(e * p for e, p in zip(scenario.eta, self.p))


@dataclass(frozen=True)
class OutageBreakdown:
    eps_round: tuple[float, ...]
    cumulative: tuple[float, ...]  # E_0 .. E_M, E_0 = 1
    p_avg: float
    flagged_rounds: tuple[int, ...] = field(default=())  # 1-based rounds with eps_m >= 1

    @property
    def valid(self) -> bool:
        return not self.flagged_rounds

    @property
    def total(self) -> float:
        return self.cumulative[-1]


def psi_factor(eta_m: float, stats: ChannelStats) -> float:
    if not eta_m > 0:
        raise ValueError(f"eta must be positive, got {eta_m!r}")
    s_sd, s_sr, s_rd = stats.sigma2_sd, stats.sigma2_sr, stats.sigma2_rd
    return (s_sr / eta_m + s_rd) / (2.0 * s_sd * s_sr * s_rd)


def phi_factor(m: int, rate: float, variant: RateSchedule = RateSchedule.PAPER_LITERAL) -> float:
    if m < 1:
        raise ValueError(f"round index starts at 1, got {m!r}")
    if RateSchedule(variant) is RateSchedule.PAPER_LITERAL:
        return math.expm1(2.0 * rate / m)
    return math.expm1(2.0 * rate)


def round_outage_closed_form(p_source: float, eta_m: float, phi: float, stats: ChannelStats) -> float:
    """High-SNR outage of one round. Callers must check the result against 1
    (see :func:`outside_validity`)."""
    if not p_source > 0:
        raise ValueError(f"p_source must be positive, got {p_source!r}")
    return psi_factor(eta_m, stats) * (phi / p_source) ** 2


def outside_validity(eps_m: float) -> bool:
    return eps_m >= 1.0


def round_constants(scenario: Scenario, stats: ChannelStats) -> np.ndarray:
    """``phi_m**2 * psi(eta_m)`` per round, so that ``eps_m = c_m / P_m**2``."""
    return np.array([
        phi_factor(m, scenario.rate, scenario.rate_schedule) ** 2 * psi_factor(eta, stats)
        for m, eta in enumerate(scenario.eta, start=1)
    ])


def average_power(schedule: PowerSchedule, prefix: Sequence[float], M: int) -> float:
    """Outage-weighted average power ``(1/M) * sum_m P_m * E_{m-1}``.

    ``prefix`` holds E_0 .. E_{M-1} (a full E_0 .. E_M sequence is accepted and
    its last entry ignored).
    """
    if len(schedule) != M or len(prefix) < M:
        raise ValueError("schedule and prefix lengths must match M")
    return sum(p * e for p, e in zip(schedule.p, prefix[:M])) / M


def cumulative_outage(schedule: PowerSchedule, scenario: Scenario, stats: ChannelStats) -> OutageBreakdown:
    if len(schedule) != scenario.M:
        raise ValueError(f"schedule has {len(schedule)} rounds, scenario has M={scenario.M}")
    eps = []
    for m, (p, eta) in enumerate(zip(schedule.p, scenario.eta), start=1):
        phi = phi_factor(m, scenario.rate, scenario.rate_schedule)
        eps.append(round_outage_closed_form(p, eta, phi, stats))
    cum = [1.0]
    for e in eps:
        cum.append(cum[-1] * e)
    flagged = tuple(m for m, e in enumerate(eps, start=1) if outside_validity(e))
    return OutageBreakdown(
        eps_round=tuple(eps),
        cumulative=tuple(cum),
        p_avg=average_power(schedule, cum, scenario.M),
        flagged_rounds=flagged,
    )


def epa_power(scenario: Scenario, stats: ChannelStats) -> PowerSchedule:
    """Equal power in every round, chosen so the cumulative outage hits the target."""
    c = round_constants(scenario, stats)
    log_p = (np.sum(np.log(c)) - math.log(scenario.target_eps)) / (2 * scenario.M)
    return PowerSchedule((math.exp(log_p),) * scenario.M)
