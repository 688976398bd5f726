"""Runtime controllers: dc-link disturbance observer and law, αβ repetitive current
loops, reference generation, PV perturb-and-observe and FC power regulation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import DelayLine, InvalidInput, SymMatrix
from .signals import AlphaBeta

EPS_V = 1.0  # V, degenerate-voltage guard
EPS_D = 1.0  # V^2, delayed-voltage denominator guard

A_DC = np.array([[0.0, 1.0], [0.0, 0.0]])
B_DC = np.array([[-1.0], [0.0]])
C_DC = np.array([[1.0, 0.0]])


class DegenerateVoltage(ArithmeticError):
    """Grid voltage too small to compute current references; hold the last one."""


@dataclass(frozen=True)
class ControllerGains:
    k_dc: float = 100.0
    K_dc: SymMatrix = field(default_factory=lambda: SymMatrix([[3.0039, -0.0079600], [-0.0079600, 2.3032e-5]]))
    L_dc: tuple = (335.7746, 0.5746834)
    k1: float = 2.287904e-3
    k2: float = 3655.479
    omega_c: float = 1000.0
    lam: float = 500.0
    tau_i: float = 2e-3
    v_dc_ref: float = 800.0

    def __post_init__(self):
        if not self.k_dc > 0:
            raise InvalidInput("k_dc must be positive")
        if not self.omega_c > 0:
            raise InvalidInput("omega_c must be positive")
        if abs(np.linalg.det(self.K_dc.array)) < 1e-300:
            raise InvalidInput("K_dc is singular")

    @classmethod
    def from_tau_i(cls, tau_i: float, **kw) -> "ControllerGains":
        """Timescale rules: current loop at rate 1/tau_i, dc loop five times slower."""
        lam = 1.0 / tau_i
        return cls(k_dc=lam / 5.0, lam=lam, tau_i=tau_i, **kw)

    @property
    def observer_gain(self) -> np.ndarray:
        """K_dc^-1 L_dc as a 2x1 column."""
        return np.linalg.solve(self.K_dc.array, np.asarray(self.L_dc, dtype=float).reshape(2, 1))

    @property
    def F(self) -> np.ndarray:
        return np.array([[self.k1 - self.k2, self.k2]])


# --------------------------------------------------------------------------
# dc loop


@dataclass(frozen=True)
class DcObserverState:
    v_hat: float = 800.0
    xi_hat: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.v_hat) and math.isfinite(self.xi_hat)):
            raise InvalidInput("observer state must be finite")


class DcObserver:
    """Trapezoidal discretisation of x' = A x + B u + M (y - C x), inputs held over the step."""

    __slots__ = ("v", "xi", "p11", "p12", "p21", "p22", "gu1", "gu2", "gy1", "gy2")

    def __init__(self, gain: np.ndarray, dt: float, v0: float = 800.0, xi0: float = 0.0):
        M = np.asarray(gain, dtype=float).reshape(2, 1)
        Abar = A_DC - M @ C_DC
        lhs = np.eye(2) - 0.5 * dt * Abar
        P = np.linalg.solve(lhs, np.eye(2) + 0.5 * dt * Abar)
        G = np.linalg.solve(lhs, dt * np.hstack([B_DC, M]))
        self.p11, self.p12, self.p21, self.p22 = P[0, 0], P[0, 1], P[1, 0], P[1, 1]
        self.gu1, self.gu2, self.gy1, self.gy2 = G[0, 0], G[1, 0], G[0, 1], G[1, 1]
        self.v, self.xi = v0, xi0

    def step(self, y: float, u: float) -> float:
        v, xi = self.v, self.xi
        self.v = self.p11 * v + self.p12 * xi + self.gu1 * u + self.gy1 * y
        self.xi = self.p21 * v + self.p22 * xi + self.gu2 * u + self.gy2 * y
        return self.xi


def dc_observer_step(state: DcObserverState, v_dc_meas: float, u: float, gains: ControllerGains,
                     dt: float) -> DcObserverState:
    obs = DcObserver(gains.observer_gain, dt, state.v_hat, state.xi_hat)
    obs.step(v_dc_meas, u)
    return DcObserverState(obs.v, obs.xi)


def dc_control(v_dc: float, v_dc_ref: float, xi_hat: float, k_dc: float) -> float:
    """Proportional law with disturbance compensation, u in V/s."""
    if not k_dc > 0:
        raise InvalidInput("k_dc must be positive")
    return k_dc * (v_dc - v_dc_ref) + xi_hat


def power_ref_normal(p_pv: float, v_dc: float, u: float, C: float) -> float:
    if not v_dc > 0:
        raise InvalidInput("v_dc must be positive")
    return p_pv + C * v_dc * u


def curtailment_ref_sag(u: float, C: float) -> float:
    """dc-link current the dc loop asks of the VSC side; the PV converter supplies its negative."""
    return C * u


# --------------------------------------------------------------------------
# reference generation


def current_refs_normal(v: AlphaBeta, P: float, Q: float, eps_v: float = EPS_V) -> AlphaBeta:
    va, vb = v
    m2 = va * va + vb * vb
    if m2 <= eps_v * eps_v:
        raise DegenerateVoltage("grid voltage below guard")
    k = 2.0 / (3.0 * m2)
    return AlphaBeta(k * (va * P + vb * Q), k * (vb * P - va * Q))


def current_refs_sag(v: AlphaBeta, v_delayed: AlphaBeta, P: float, Q: float, eps_d: float = EPS_D) -> AlphaBeta:
    """Delayed-voltage references: constant real power and sinusoidal currents under unbalance."""
    va, vb = v
    da, db = v_delayed
    den = vb * da - va * db
    if abs(den) <= eps_d:
        raise DegenerateVoltage("delayed-voltage denominator collapsed")
    k = 2.0 / (3.0 * den)
    return AlphaBeta(k * (vb * Q - db * P), k * (da * P - va * Q))


def limit_magnitude(i: AlphaBeta, i_max: float) -> AlphaBeta:
    m = math.hypot(i[0], i[1])
    if m <= i_max:
        return i
    s = i_max / m
    return AlphaBeta(i[0] * s, i[1] * s)


# --------------------------------------------------------------------------
# repetitive current loop


class RepetitiveState:
    """Filtered repetitive controller state for one axis."""

    __slots__ = ("x_rc", "x_delay", "e_delay")

    def __init__(self, delay_samples: int, x_rc: float = 0.0):
        self.x_rc = x_rc
        self.x_delay = DelayLine(delay_samples)
        self.e_delay = DelayLine(delay_samples)

    @classmethod
    def for_period(cls, tau: float, dt: float) -> "RepetitiveState":
        return cls(DelayLine.from_seconds(tau, dt).length)

    def advance(self, e: float, omega_c: float, dt: float, frozen: bool = False) -> float:
        """Forward-Euler update using the delayed taps; returns the new x_rc."""
        x = self.x_rc
        xd = self.x_delay.shift(x)
        ed = self.e_delay.shift(e)
        if not frozen:
            self.x_rc = x + dt * omega_c * (xd + ed - x)
        return self.x_rc


def repetitive_step(state: RepetitiveState, e: float, i_meas: float, i_ref: float, gains: ControllerGains,
                    dt: float, u_limit: float = math.inf) -> tuple[float, RepetitiveState]:
    """Control output ``k1 i + k2 (i_ref - i + x_rc)`` and the advanced state.

    When the output saturates the repetitive state is held (anti-windup).
    """
    u = gains.k1 * i_meas + gains.k2 * (i_ref - i_meas + state.x_rc)
    clamped = abs(u) > u_limit
    if clamped:
        u = math.copysign(u_limit, u)
    state.advance(e, gains.omega_c, dt, frozen=clamped)
    return u, state


# --------------------------------------------------------------------------
# PV and FC converters


def mppt_po(p_now: float, v_now: float, prev: tuple[float, float], step: float) -> float:
    """Perturb and observe: duty increment for the next period.

    Raising the boost duty lowers the array voltage, so a desired voltage
    direction ``s`` maps to a duty change of ``-s * step``.
    """
    p_prev, v_prev = prev
    dv = v_now - v_prev
    dp = p_now - p_prev
    if dv == 0.0:
        direction = 1.0
    elif dp >= 0.0:
        direction = math.copysign(1.0, dv)
    else:
        direction = -math.copysign(1.0, dv)
    return -direction * step


FC_KP = 50.0
FC_DUTY_MAX = 0.95


def fc_power_control(p_ref: float, p_meas: float, p_base: float = 50e3, k_p: float = FC_KP,
                     d_max: float = FC_DUTY_MAX) -> float:
    """Proportional duty command on the per-unit power error."""
    d = k_p * (p_ref - p_meas) / p_base
    return min(max(d, 0.0), d_max)


def fc_demand_from_duty(duty: float, rated: float, d_max: float = FC_DUTY_MAX) -> float:
    """Power drawn from the stacks for a boost duty; full duty maps to rated output."""
    return rated * duty / d_max
