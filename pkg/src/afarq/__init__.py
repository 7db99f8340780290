"""Optimal power allocation for Type-I ARQ over a two-hop amplify-and-forward relay."""

from afarq.fading import (
    ChannelStats,
    LinkGains,
    RoundPowers,
    af_mutual_information,
    outage_indicator,
    relay_combining_term,
    sample_gains,
)
from afarq.outage import (
    OutageBreakdown,
    PowerSchedule,
    RateSchedule,
    Scenario,
    average_power,
    cumulative_outage,
    epa_power,
    phi_factor,
    psi_factor,
    round_outage_closed_form,
)
from afarq.opa import (
    KktReport,
    RecursionVariant,
    SolverConfig,
    SolverError,
    gp_oracle,
    kkt_residuals,
    lambda_closed_form,
    opa_closed_form,
)

__version__ = "0.1.0"
