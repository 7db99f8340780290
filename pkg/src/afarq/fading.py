"""Rayleigh block-fading model for one AF relaying round.

Channel gains are exponential with mean ``sigma2_ij``; noise powers are 1, so
every power below is a noise-normalized SNR. Mutual information is in nats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def _check_nonneg_finite(name: str, value) -> None:
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {value!r}")
    if np.any(arr < 0):
        raise ValueError(f"{name} must be non-negative, got {value!r}")


@dataclass(frozen=True)
class ChannelStats:
    """Mean channel power gains of the source-destination, source-relay and
    relay-destination links."""

    sigma2_sd: float = 2.0
    sigma2_sr: float = 1.0
    sigma2_rd: float = 1.0

    def __post_init__(self):
        for name in ("sigma2_sd", "sigma2_sr", "sigma2_rd"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v!r}")


@dataclass(frozen=True)
class LinkGains:
    """Power gains |h|^2 of the three links. Fields may be scalars or equally
    shaped arrays (one entry per fading realization)."""

    g_sd: float | np.ndarray
    g_sr: float | np.ndarray
    g_rd: float | np.ndarray

    def __post_init__(self):
        for name in ("g_sd", "g_sr", "g_rd"):
            _check_nonneg_finite(name, getattr(self, name))


@dataclass(frozen=True)
class RoundPowers:
    p_source: float
    p_relay: float

    def __post_init__(self):
        for name in ("p_source", "p_relay"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v!r}")


def relay_combining_term(x, y):
    """Effective SNR of the amplified relay path, ``x*y / (x + y + 1)``.

    Works elementwise on arrays. Bounded above by ``min(x, y)``.
    """
    _check_nonneg_finite("x", x)
    _check_nonneg_finite("y", y)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = x * y / (x + y + 1.0)
    return float(out) if out.ndim == 0 else out


def af_mutual_information(gains: LinkGains, powers: RoundPowers):
    """Mutual information (nats per channel use) accumulated at the destination
    after MRC of the direct and relayed copies within one round."""
    ps, pr = powers.p_source, powers.p_relay
    direct = ps * np.asarray(gains.g_sd, dtype=float)
    relayed = relay_combining_term(ps * np.asarray(gains.g_sr, dtype=float),
                                   pr * np.asarray(gains.g_rd, dtype=float))
    out = 0.5 * np.log1p(direct + relayed)
    return float(out) if np.ndim(out) == 0 else out


def sample_gains(stats: ChannelStats, rng: np.random.Generator, size=None) -> LinkGains:
    """Draw independent exponential gains with means ``stats.sigma2_*``.

    The three links are drawn in a fixed order (sd, sr, rd) so a seeded
    generator always yields the same realization.
    """
    g_sd = rng.exponential(stats.sigma2_sd, size)
    g_sr = rng.exponential(stats.sigma2_sr, size)
    g_rd = rng.exponential(stats.sigma2_rd, size)
    return LinkGains(g_sd, g_sr, g_rd)


def outage_indicator(gains: LinkGains, powers: RoundPowers, rate: float):
    """True where the round's mutual information falls below ``rate``."""
    if not rate > 0:
        raise ValueError(f"rate must be positive, got {rate!r}")
    out = np.asarray(af_mutual_information(gains, powers)) < rate
    return bool(out) if out.ndim == 0 else out


def exact_round_outage(powers: RoundPowers, rate: float, stats: ChannelStats) -> float:
    """Exact single-round outage probability by numerical integration.

    Integrates ``P(P_s X < t - f(P_s Y, P_r Z))`` over the relay-path gains,
    splitting the ``z`` axis where the relay path alone can clear the threshold
    ``t = exp(2 rate) - 1``. Slow (a few hundred ms); meant as a reference for
    checking the closed form and the simulator.
    """
    from scipy import integrate

    ps, pr = powers.p_source, powers.p_relay
    s_sd, s_sr, s_rd = stats.sigma2_sd, stats.sigma2_sr, stats.sigma2_rd
    thr = math.expm1(2.0 * rate)
    y_max, z_max = 60.0 * s_sr, 60.0 * s_rd

    def over_y(z):
        a = pr * z
        # beyond y_star the relayed SNR alone exceeds the threshold
        y_star = math.inf if a <= thr else thr * (a + 1.0) / (ps * (a - thr))
        top = min(y_star, y_max)

        def integrand(y):
            x = ps * y
            slack = (thr - x * a / (x + a + 1.0)) / ps
            return -math.expm1(-slack / s_sd) * math.exp(-y / s_sr) / s_sr

        kink = thr / ps
        v, _ = integrate.quad(integrand, 0.0, top, epsabs=0.0, epsrel=1e-11, limit=200,
                              points=[kink] if kink < top else None)
        return v * math.exp(-z / s_rd) / s_rd

    zb = thr / pr
    total = 0.0
    for lo, hi, pts in ((0.0, zb, None), (zb, 1.5 * zb, None),
                        (1.5 * zb, z_max, [b for b in (3 * zb, 10 * zb, 100 * zb) if b < z_max])):
        if lo >= hi:
            continue
        v, _ = integrate.quad(over_y, lo, hi, epsabs=0.0, epsrel=1e-10, limit=400, points=pts or None)
        total += v
    return total
