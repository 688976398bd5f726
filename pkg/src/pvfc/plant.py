"""Averaged plant: PV array, fuel-cell generator, dc link, series RL grid interface.

The VSC is an ideal averaged source whose terminal voltage follows its command,
limited to the linear modulation range ``|u_t| <= v_dc / 2``.  The RL branch is
advanced in closed form for a terminal voltage that is affine in the branch
current and linear in time over the step, so controllers with very large
proportional gains can be emulated as continuous-time loops without shrinking
the step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence

import numpy as np

from .numerics import InvalidInput
from .signals import clarke

BOLTZMANN = 1.380649e-23
CHARGE = 1.602176634e-19
KELVIN = 273.15
SQRT3 = math.sqrt(3.0)


class ModelFault(ArithmeticError):
    """A component model failed to produce a valid operating point."""


class DcCollapse(RuntimeError):
    """The dc-link voltage fell below the survivable minimum."""


class ConfigurationError(ValueError):
    pass


# --------------------------------------------------------------------------
# PV array


@dataclass(frozen=True)
class PvArrayParams:
    parallel_strings: int = 66
    modules_per_string: int = 5
    photocurrent_coeff: float = 6.073648338437753e-3  # A per W/m^2, per module
    saturation_current: float = 6.3014e-12  # A
    ideality: float = 0.94504
    series_resistance: float = 0.7537209539208563  # ohm, per module
    shunt_resistance: float = 1000.0  # ohm, per module
    cells: int = 96
    ref_irradiance: float = 1000.0
    ref_temperature: float = 25.0

    def thermal_voltage(self, temperature: float) -> float:
        """Modified ideality voltage n * Ns * kT/q of one module."""
        return self.ideality * self.cells * BOLTZMANN * (temperature + KELVIN) / CHARGE


def _module_current(v: float, iph: float, p: PvArrayParams, a: float) -> float:
    i0, rs, rsh = p.saturation_current, p.series_resistance, p.shunt_resistance
    i = iph
    for _ in range(100):
        x = (v + i * rs) / a
        if x > 700.0:
            raise ModelFault("diode exponent overflow")
        e = math.exp(x)
        f = iph - i0 * (e - 1.0) - (v + i * rs) / rsh - i
        df = -i0 * e * rs / a - rs / rsh - 1.0
        step = f / df
        # damping: never move the diode exponent by more than 2 per iteration
        lim = 2.0 * a / rs
        if abs(step) > lim:
            step = math.copysign(lim, step)
        i -= step
        if abs(step) <= 1e-9 * max(abs(i), 1e-3):
            return i
    raise ModelFault(f"Newton did not converge at v={v}")


def pv_current(v: float, irradiance: float, temperature: float = 25.0,
               params: PvArrayParams = PvArrayParams()) -> float:
    """Array terminal current (A) at array voltage ``v`` from the single-diode model."""
    if v < 0:
        raise InvalidInput("PV voltage must be non-negative")
    if irradiance < 0:
        raise InvalidInput("irradiance must be non-negative")
    a = params.thermal_voltage(temperature)
    vm = v / params.modules_per_string
    im = _module_current(vm, params.photocurrent_coeff * irradiance, params, a)
    return params.parallel_strings * im


def open_circuit_voltage(irradiance: float, temperature: float = 25.0,
                         params: PvArrayParams = PvArrayParams()) -> float:
    if irradiance <= 0:
        return 0.0
    lo, hi = 0.0, 100.0 * params.modules_per_string
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if pv_current(mid, irradiance, temperature, params) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-10:
            break
    return 0.5 * (lo + hi)


def maximum_power_point(irradiance: float, temperature: float = 25.0,
                        params: PvArrayParams = PvArrayParams()) -> tuple[float, float]:
    """(v_mpp, p_mpp) by golden-section search on [0, Voc]."""
    voc = open_circuit_voltage(irradiance, temperature, params)
    if voc == 0.0:
        return 0.0, 0.0

    def p(v):
        return v * pv_current(v, irradiance, temperature, params)

    g = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = 0.0, voc
    c, d = b - g * (b - a), a + g * (b - a)
    pc, pd = p(c), p(d)
    while b - a > 1e-7:
        if pc > pd:
            b, d, pd = d, c, pc
            c = b - g * (b - a)
            pc = p(c)
        else:
            a, c, pc = c, d, pd
            d = a + g * (b - a)
            pd = p(d)
    v = 0.5 * (a + b)
    return v, p(v)


def calibrate_pv(p_ref: float = 100e3, p_low: float = 29.5e3, g_low: float = 300.0,
                 base: PvArrayParams = PvArrayParams(),
                 rs_bounds: tuple[float, float] = (0.2, 1.5)) -> PvArrayParams:
    """Fit photocurrent coefficient and series resistance to two power anchors.

    Inner bisection sets the photocurrent so that the reference-irradiance
    maximum equals ``p_ref``; outer bisection on the series resistance matches
    the low-irradiance maximum.  More series resistance penalises high currents,
    so the low/high power ratio rises monotonically with it.
    """

    def fit_iph(params):
        lo, hi = 1e-4, 2e-2
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if maximum_power_point(params.ref_irradiance, params.ref_temperature,
                                   replace(params, photocurrent_coeff=mid))[1] < p_ref:
                lo = mid
            else:
                hi = mid
        return replace(params, photocurrent_coeff=0.5 * (lo + hi))

    lo, hi = rs_bounds
    params = base
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        params = fit_iph(replace(base, series_resistance=mid))
        if maximum_power_point(g_low, params.ref_temperature, params)[1] < p_low:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-9:
            break
    return params


class PvCurve:
    """Tabulated P(v) of the array at one irradiance, for fast lookups in the time loop."""

    def __init__(self, irradiance: float, temperature: float = 25.0,
                 params: PvArrayParams = PvArrayParams(), points: int = 4001):
        self.irradiance = irradiance
        self.voc = open_circuit_voltage(irradiance, temperature, params)
        self.v_mpp, self.p_mpp = maximum_power_point(irradiance, temperature, params)
        n = points - 1
        self.dv = self.voc / n if self.voc > 0 else 1.0
        if self.voc > 0:
            self.p = [k * self.dv * pv_current(k * self.dv, irradiance, temperature, params)
                      for k in range(n)] + [0.0]
        else:
            self.p = [0.0] * points
        self.n = n
        k_mpp = int(self.v_mpp / self.dv)
        self._right_v = np.arange(k_mpp + 1, n + 1) * self.dv
        self._right_p = np.array(self.p[k_mpp + 1:])

    def power(self, v: float) -> float:
        if v <= 0.0 or v >= self.voc:
            return 0.0
        x = v / self.dv
        k = int(x)
        f = x - k
        return self.p[k] * (1.0 - f) + self.p[k + 1] * f

    def voltage_for_power(self, p: float) -> float:
        """Operating voltage above the MPP that delivers ``p`` (curtailment branch)."""
        if p >= self.p_mpp:
            return self.v_mpp
        if p <= 0.0:
            return self.voc
        # right branch is decreasing; interpolate on the reversed arrays
        return float(np.interp(p, self._right_p[::-1], self._right_v[::-1]))


@lru_cache(maxsize=32)
def pv_curve(irradiance: float, temperature: float = 25.0, params: PvArrayParams = PvArrayParams()) -> PvCurve:
    return PvCurve(irradiance, temperature, params)


# --------------------------------------------------------------------------
# fuel cell


@dataclass(frozen=True)
class FcGenParams:
    stacks: int = 2
    stack_rating: float = 50e3  # W
    time_constant: float = 0.2  # s
    ramp_limit: float = 500e3  # W/s
    min_power: float = 0.0

    @property
    def rated(self) -> float:
        return self.stacks * self.stack_rating


def fc_step(p_ref: float, p: float, dt: float, params: FcGenParams = FcGenParams()) -> float:
    """Rate-limited first-order lag of the generator output toward ``p_ref``."""
    if not 0.0 <= p_ref <= params.rated * (1 + 1e-12):
        raise InvalidInput(f"FC power reference {p_ref} outside [0, {params.rated}]")
    target = p + (p_ref - p) * -math.expm1(-dt / params.time_constant)
    dmax = params.ramp_limit * dt
    delta = min(max(target - p, -dmax), dmax)
    return min(max(p + delta, params.min_power), params.rated)


# --------------------------------------------------------------------------
# electrical interface and grid


@dataclass(frozen=True)
class ElectricalParams:
    C: float = 12e-3
    R: float = 1.6145e-3  # filter 1 mOhm + transformer 0.002 pu on 0.3073 Ohm
    L: float = 0.2989e-3  # filter 0.25 mH + transformer 0.06 pu reactance at 60 Hz
    frequency: float = 60.0
    line_voltage_rms: float = 260.0
    r_factor: float = 1.0
    l_factor: float = 1.0
    c_factor: float = 1.0
    v_dc_min: float = 50.0

    def __post_init__(self):
        if min(self.C, self.R, self.L) <= 0:
            raise ConfigurationError("R, L and C must be positive")
        for name in ("r_factor", "l_factor", "c_factor"):
            f = getattr(self, name)
            if not 0.7 - 1e-12 <= f <= 1.3 + 1e-12:
                raise ConfigurationError(f"{name}={f} outside [0.7, 1.3]")

    @property
    def v_hat(self) -> float:
        """Phase-voltage amplitude of the grid."""
        return self.line_voltage_rms * math.sqrt(2.0) / SQRT3

    @property
    def omega(self) -> float:
        return 2.0 * math.pi * self.frequency

    @property
    def R_true(self) -> float:
        return self.R * self.r_factor

    @property
    def L_true(self) -> float:
        return self.L * self.l_factor

    @property
    def C_true(self) -> float:
        return self.C * self.c_factor


@dataclass(frozen=True)
class SagSpec:
    start: float
    end: float
    fractions: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if not self.start < self.end:
            raise ConfigurationError("sag start must precede its end")
        if len(self.fractions) != 3 or not all(0.0 < f <= 1.0 for f in self.fractions):
            raise ConfigurationError("retained fractions must lie in (0, 1]")

    def active(self, t: float) -> bool:
        return self.start <= t < self.end


def check_sags(sags: Sequence[SagSpec]) -> tuple:
    ordered = sorted(sags, key=lambda s: s.start)
    for a, b in zip(ordered, ordered[1:]):
        if b.start < a.end:
            raise ConfigurationError(f"sags overlap: [{a.start}, {a.end}) and [{b.start}, {b.end})")
    return tuple(ordered)


def grid_voltages(t: float, sags: Sequence[SagSpec] = (), v_hat: float = ElectricalParams().v_hat,
                  frequency: float = 60.0) -> tuple[float, float, float]:
    """Phase voltages of the ideal grid source at time ``t``."""
    fa = fb = fc = 1.0
    for s in check_sags(sags):
        if s.active(t):
            fa, fb, fc = s.fractions
            break
    th = 2.0 * math.pi * frequency * t
    return (fa * v_hat * math.cos(th),
            fb * v_hat * math.cos(th - 2.0 * math.pi / 3.0),
            fc * v_hat * math.cos(th + 2.0 * math.pi / 3.0))


# --------------------------------------------------------------------------
# RL branch and dc link


def _phi(z: float) -> tuple[float, float, float]:
    """exp(z), phi1(z) = (e^z - 1)/z and phi2(z) = (e^z - 1 - z)/z^2."""
    if abs(z) < 1e-3:
        return math.exp(z), 1.0 + z / 2.0 + z * z / 6.0, 0.5 + z / 6.0 + z * z / 24.0
    em1 = math.expm1(z)
    return em1 + 1.0, em1 / z, (em1 - z) / (z * z)


class RlStep:
    """Closed-form update of ``L di/dt = -R i + u0(t) + g i - v(t)`` over one step.

    ``u0`` and ``v`` vary linearly across the step.  Coefficients depend only on
    (R, L, g, h) and are cached.
    """

    __slots__ = ("E", "c1", "c2", "g", "h")

    def __init__(self, R: float, L: float, g: float, h: float):
        z = (g - R) / L * h
        E, p1, p2 = _phi(z)
        self.E, self.c1, self.c2, self.g, self.h = E, h * p1 / L, h * p2 / L, g, h

    def advance(self, i0: float, b0: float, b1: float) -> float:
        """``b`` is the driving voltage u0 - v at the start and end of the step."""
        return self.E * i0 + self.c1 * b0 + self.c2 * (b1 - b0)


@dataclass(frozen=True)
class PlantState:
    t: float = 0.0
    v_dc: float = 800.0
    i_alpha: float = 0.0
    i_beta: float = 0.0
    v_pv: float = 0.0
    pv_duty: float = 0.0
    p_pv: float = 0.0
    p_fc: float = 0.0
    p_dump: float = 0.0
    saturated: bool = False

    def __post_init__(self):
        vals = (self.t, self.v_dc, self.i_alpha, self.i_beta, self.v_pv, self.pv_duty, self.p_pv, self.p_fc)
        if not all(math.isfinite(x) for x in vals):
            raise ModelFault("non-finite plant state")


@dataclass(frozen=True)
class PlantInputs:
    """Actuator commands for one step.

    The VSC command is ``u_t = u0 + gain * i`` with ``u0`` moving linearly from
    ``u_alpha, u_beta`` to ``u_alpha_end, u_beta_end`` (equal by default, i.e. a
    zero-order hold).  The PV converter takes either a duty ratio (MPPT) or a
    dc-link current setpoint (curtailment).
    """

    u_alpha: float = 0.0
    u_beta: float = 0.0
    u_alpha_end: float | None = None
    u_beta_end: float | None = None
    gain: float = 0.0
    pv_duty: float | None = None
    pv_link_current: float | None = None
    fc_demand: float = 0.0
    p_dump: float = 0.0
    irradiance: float = 0.0
    zeta_dc: float = 0.0
    zeta_alpha: float = 0.0
    zeta_beta: float = 0.0


@dataclass(frozen=True)
class PlantParams:
    electrical: ElectricalParams = field(default_factory=ElectricalParams)
    pv: PvArrayParams = field(default_factory=PvArrayParams)
    fc: FcGenParams = field(default_factory=FcGenParams)
    sags: tuple = ()
    temperature: float = 25.0

    def __post_init__(self):
        object.__setattr__(self, "sags", check_sags(self.sags))


class GridInterface:
    """Mutable RL-branch-plus-dc-link integrator used inside the time loop."""

    SUBSTEPS = 64

    def __init__(self, params: ElectricalParams, dt: float, v_dc: float = 800.0,
                 i_alpha: float = 0.0, i_beta: float = 0.0):
        self.p = params
        self.dt = dt
        self.R, self.L, self.C = params.R_true, params.L_true, params.C_true
        self.v_dc = v_dc
        self.ia, self.ib = i_alpha, i_beta
        self.energy = 0.5 * self.C * v_dc * v_dc
        self.p_vsc = 0.0
        self.saturated = False
        self._cache: dict = {}

    def _rl(self, g: float, h: float) -> RlStep:
        key = (g, h)
        r = self._cache.get(key)
        if r is None:
            r = self._cache[key] = RlStep(self.R, self.L, g, h)
        return r

    def step(self, u0a: float, u0b: float, u1a: float, u1b: float, g: float,
             v0a: float, v0b: float, v1a: float, v1b: float,
             p_in: float, p_dump: float, za: float = 0.0, zb: float = 0.0, zdc: float = 0.0) -> None:
        ia, ib = self.ia, self.ib
        lim = 0.5 * self.v_dc
        lim2 = lim * lim
        usa, usb = u0a + g * ia, u0b + g * ib
        rl = self._rl(g, self.dt)
        # additive noise enters as an equivalent series voltage
        La, Lb = za * self.L, zb * self.L
        ia1 = rl.advance(ia, u0a - v0a + La, u1a - v1a + La)
        ib1 = rl.advance(ib, u0b - v0b + Lb, u1b - v1b + Lb)
        uea, ueb = u1a + g * ia1, u1b + g * ib1
        if usa * usa + usb * usb <= lim2 and uea * uea + ueb * ueb <= lim2:
            self.saturated = False
            pt = 0.75 * (usa * ia + usb * ib + uea * ia1 + ueb * ib1)
        else:
            ia1, ib1, pt = self._saturating(ia, ib, u0a, u0b, u1a, u1b, g, v0a, v0b, v1a, v1b, La, Lb, lim)
        self.ia, self.ib = ia1, ib1
        self.p_vsc = pt
        self.energy += self.dt * (p_in - pt - p_dump + zdc * self.C * self.v_dc)
        if self.energy <= 0.0:
            raise DcCollapse("dc-link energy exhausted")
        v = math.sqrt(2.0 * self.energy / self.C)
        if v <= self.p.v_dc_min:
            raise DcCollapse(f"v_dc fell to {v:.1f} V")
        self.v_dc = v

    def _saturating(self, ia, ib, u0a, u0b, u1a, u1b, g, v0a, v0b, v1a, v1b, La, Lb, lim):
        n = self.SUBSTEPS
        h = self.dt / n
        lin = self._rl(g, h)
        free = self._rl(0.0, h)
        energy = 0.0
        sat_any = False
        for k in range(n):
            f0, f1 = k / n, (k + 1) / n
            a0 = u0a + (u1a - u0a) * f0
            b0 = u0b + (u1b - u0b) * f0
            a1 = u0a + (u1a - u0a) * f1
            b1 = u0b + (u1b - u0b) * f1
            va0 = v0a + (v1a - v0a) * f0
            vb0 = v0b + (v1b - v0b) * f0
            va1 = v0a + (v1a - v0a) * f1
            vb1 = v0b + (v1b - v0b) * f1
            ua, ub = a0 + g * ia, b0 + g * ib
            mag = math.hypot(ua, ub)
            if mag > lim:
                s = lim / mag
                ua, ub = ua * s, ub * s
                na = free.advance(ia, ua - va0 + La, ua - va1 + La)
                nb = free.advance(ib, ub - vb0 + Lb, ub - vb1 + Lb)
                energy += 0.75 * h * (ua * (ia + na) + ub * (ib + nb))
                sat_any = True
            else:
                na = lin.advance(ia, a0 - va0 + La, a1 - va1 + La)
                nb = lin.advance(ib, b0 - vb0 + Lb, b1 - vb1 + Lb)
                ea, eb = a1 + g * na, b1 + g * nb
                m2 = math.hypot(ea, eb)
                if m2 > lim:
                    ea, eb = ea * lim / m2, eb * lim / m2
                energy += 0.75 * h * (ua * ia + ub * ib + ea * na + eb * nb)
            ia, ib = na, nb
        self.saturated = sat_any
        return ia, ib, energy / self.dt


def plant_step(state: PlantState, inputs: PlantInputs, dt: float,
               params: PlantParams = PlantParams()) -> PlantState:
    """Advance the whole averaged plant by one step of length ``dt``."""
    if not dt > 0:
        raise InvalidInput("dt must be positive")
    el = params.electrical
    curve = pv_curve(float(inputs.irradiance), params.temperature, params.pv)
    # PV converter: a duty ratio fixes the array voltage; a link-current setpoint
    # fixes the delivered power, capped by what the array can give
    if inputs.pv_link_current is not None:
        p_pv = min(max(inputs.pv_link_current * state.v_dc, 0.0), curve.p_mpp)
        v_pv = curve.voltage_for_power(p_pv)
        duty = 1.0 - v_pv / state.v_dc
    else:
        duty = state.pv_duty if inputs.pv_duty is None else inputs.pv_duty
        duty = min(max(duty, 0.0), 1.0)
        v_pv = (1.0 - duty) * state.v_dc
        p_pv = curve.power(v_pv)
    p_fc = fc_step(min(max(inputs.fc_demand, 0.0), params.fc.rated), state.p_fc, dt, params.fc)

    t0, t1 = state.t, state.t + dt
    va0, vb0 = clarke(*grid_voltages(t0, params.sags, el.v_hat, el.frequency))
    va1, vb1 = clarke(*grid_voltages(t1, params.sags, el.v_hat, el.frequency))
    gi = GridInterface(el, dt, state.v_dc, state.i_alpha, state.i_beta)
    u1a = inputs.u_alpha if inputs.u_alpha_end is None else inputs.u_alpha_end
    u1b = inputs.u_beta if inputs.u_beta_end is None else inputs.u_beta_end
    gi.step(inputs.u_alpha, inputs.u_beta, u1a, u1b, inputs.gain, va0, vb0, va1, vb1,
            0.5 * (state.p_fc + p_fc) + p_pv, inputs.p_dump,
            inputs.zeta_alpha, inputs.zeta_beta, inputs.zeta_dc)
    return PlantState(t1, gi.v_dc, gi.ia, gi.ib, v_pv, duty, p_pv, p_fc, inputs.p_dump, gi.saturated)

