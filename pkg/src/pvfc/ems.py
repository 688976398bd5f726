"""Supervisory energy management: demand clamping, apparent-power limiting and
power splitting between PV, fuel cell and dump load, plus sag-mode references."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .numerics import InvalidInput
from .signals import AlphaBeta, SagStatus

V_HAT = 260.0 * math.sqrt(2.0) / math.sqrt(3.0)


@dataclass(frozen=True)
class Demand:
    P_star: float
    Q_star: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.P_star) and math.isfinite(self.Q_star)):
            raise InvalidInput("demand must be finite")


@dataclass(frozen=True)
class EmsLimits:
    S_max: float = 220e3
    P_fc_rated: float = 100e3
    I_rated: float = 220e3 / (1.5 * V_HAT)  # phase-current amplitude at S_max and nominal voltage
    v_hat: float = V_HAT

    def __post_init__(self):
        if min(self.S_max, self.P_fc_rated, self.I_rated, self.v_hat) <= 0:
            raise InvalidInput("limits must be positive")


@dataclass(frozen=True)
class SagPolicy:
    k_q: float = 1.75  # reactive support per unit of retained-voltage loss
    pv_headroom: float = 0.9  # share of available PV the grid reference may claim
    reserve_grid: float = 0.5  # PV share kept under dc-loop authority, per unit of P_grid_ref
    reserve_pv: float = 0.05  # ... and per unit of available PV


@dataclass(frozen=True)
class EmsDecision:
    P_fc_ref: float
    P_dump_ref: float
    Q_grid_ref: float
    P_grid_ref: float | None
    mode: str
    P_clamped: float = 0.0

    def __post_init__(self):
        if self.mode not in ("normal", "sag"):
            raise InvalidInput(f"unknown mode {self.mode!r}")
        if self.P_fc_ref < 0 or self.P_dump_ref < 0:
            raise InvalidInput("FC and dump references must be non-negative")


def dynamic_apparent_limit(sag: SagStatus, limits: EmsLimits) -> float:
    """Apparent power that keeps every phase current at or below rated under the sag."""
    return 1.5 * limits.v_hat * sag.min_fraction * limits.I_rated


def sag_power_refs(sag: SagStatus, limits: EmsLimits, pre_sag_p_grid: float,
                   k_q: float = SagPolicy.k_q) -> tuple[float, float]:
    """(P_grid_ref, Q_grid_ref) during a sag; real power yields to reactive support."""
    if not sag.active:
        raise InvalidInput("sag references requested without an active sag")
    s = dynamic_apparent_limit(sag, limits)
    q = min(max(k_q * (1.0 - sag.min_fraction) * s, 0.0), s)
    p = min(max(pre_sag_p_grid, 0.0), math.sqrt(max(s * s - q * q, 0.0)))
    return p, q


def ems_step(demand: Demand, p_pv: float, sag: SagStatus | None, limits: EmsLimits = EmsLimits(),
             v: AlphaBeta | None = None, *, pre_sag_p_grid: float = 0.0, p_pv_avail: float | None = None,
             p_fc_meas: float = 0.0, policy: SagPolicy = SagPolicy()) -> EmsDecision:
    """One supervisory decision.

    In normal mode the demand is clamped to plant capability, reactive power is cut
    back first when the apparent-power circle binds, and the PV surplus or
    deficit is routed to the dump load or the FC.  In sag mode the FC is ramped
    to zero, PV is curtailed by the dc loop, and the dump load only soaks up the
    FC output that exceeds the curtailed grid share while the FC winds down.
    """
    del v  # voltage enters through the sag status; kept for interface symmetry
    if p_pv < 0:
        raise InvalidInput("PV power must be non-negative")
    if sag is not None and sag.active:
        p_ref, q_ref = sag_power_refs(sag, limits, pre_sag_p_grid, policy.k_q)
        avail = p_pv if p_pv_avail is None else p_pv_avail
        p_ref = min(p_ref, policy.pv_headroom * avail)
        reserve = policy.reserve_grid * p_ref + policy.reserve_pv * avail
        dump = max(0.0, p_fc_meas + reserve - p_ref) if p_fc_meas > 0.0 else 0.0
        return EmsDecision(0.0, dump, q_ref, p_ref, "sag", p_ref)

    p_clamped = min(demand.P_star, p_pv + limits.P_fc_rated)
    p_clamped = max(p_clamped, 0.0)
    q = demand.Q_star
    if math.hypot(p_clamped, q) > limits.S_max:
        q = math.copysign(math.sqrt(max(0.0, limits.S_max ** 2 - p_clamped ** 2)), q)
    if p_pv >= p_clamped:
        return EmsDecision(0.0, p_pv - p_clamped, q, None, "normal", p_clamped)
    return EmsDecision(min(p_clamped - p_pv, limits.P_fc_rated), 0.0, q, None, "normal", p_clamped)
