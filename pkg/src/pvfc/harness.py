"""Scenario definition, closed-loop simulation, metrics and acceptance verdicts."""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from . import lmi
from .control import (ControllerGains, DcObserver, DegenerateVoltage, current_refs_normal, current_refs_sag,
                      fc_demand_from_duty, fc_power_control, mppt_po)
from .ems import Demand, EmsLimits, SagPolicy, ems_step
from .numerics import SymMatrix, UndefinedTHD, thd
from .plant import (ConfigurationError, DcCollapse, ElectricalParams, FcGenParams, GridInterface, ModelFault,
                    PvArrayParams, SagSpec, check_sags, fc_step, pv_curve)
from .signals import AmplitudeTracker, AlphaBeta, SagStatus, detect_sag

DT = 1.0 / 60000.0
CSV_COLUMNS = ("time_s", "v_dc_V", "i_a_A", "i_b_A", "i_c_A", "v_a_V", "v_b_V", "v_c_V",
               "P_grid_W", "Q_grid_var", "P_pv_W", "P_fc_W", "P_dump_W", "mode")
TRANSIENT_WINDOW = 0.3
SQRT3 = math.sqrt(3.0)
TABLE_K1, TABLE_K2 = -0.1649, 1.2197e4


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "custom"
    duration: float = 10.0
    demand: tuple = ((0.0, 0.0, 0.0),)  # (t, P*, Q*)
    irradiance: tuple = ((0.0, 1000.0),)  # (t, W/m^2)
    sags: tuple = ()
    electrical: ElectricalParams = field(default_factory=ElectricalParams)
    pv: PvArrayParams = field(default_factory=PvArrayParams)
    fc: FcGenParams = field(default_factory=lambda: FcGenParams(time_constant=0.05))
    limits: EmsLimits = field(default_factory=EmsLimits)
    policy: SagPolicy = field(default_factory=SagPolicy)
    gains: str = "synth"  # "synth", "table" or a gains-file path
    seed: int = 0
    dt: float = DT
    decimation: int = 10
    channels: tuple = CSV_COLUMNS
    v_dc_ref: float = 800.0
    ems_period: float = 1e-3
    mppt_period: float = 0.01
    mppt_step: float = 0.002
    noise_dc: float = 0.0  # std of the dc-link disturbance channel, V/s
    noise_ac: float = 0.0  # std of the ac-side disturbance channels, A/s
    case_id: int | None = None

    def __post_init__(self):
        if not self.duration > 0:
            raise ConfigurationError("duration must be positive")
        for sched, label in ((self.demand, "demand"), (self.irradiance, "irradiance")):
            times = [row[0] for row in sched]
            if not times or times != sorted(times) or times[0] > 0:
                raise ConfigurationError(f"{label} schedule must be sorted and start at t <= 0")
        if any(row[1] < 0 for row in self.irradiance):
            raise ConfigurationError("irradiance must be non-negative")
        object.__setattr__(self, "sags", check_sags(self.sags))
        unknown = set(self.channels) - set(CSV_COLUMNS)
        if unknown:
            raise ConfigurationError(f"unknown channels {sorted(unknown)}")
        if self.decimation < 1:
            raise ConfigurationError("decimation must be a positive integer")
        if abs(round(self.ems_period / self.dt) * self.dt - self.ems_period) > 1e-12:
            raise ConfigurationError("EMS period must be a whole number of steps")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sags"] = [asdict(s) for s in self.sags]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        try:
            if "sags" in d:
                d["sags"] = tuple(SagSpec(s["start"], s["end"], tuple(s["fractions"])) for s in d["sags"])
            for key, typ in (("electrical", ElectricalParams), ("pv", PvArrayParams), ("fc", FcGenParams),
                             ("limits", EmsLimits), ("policy", SagPolicy)):
                if key in d:
                    d[key] = typ(**d[key])
            for key in ("demand", "irradiance", "channels"):
                if key in d:
                    d[key] = tuple(tuple(r) if isinstance(r, (list, tuple)) else r for r in d[key])
            return cls(**d)
        except (TypeError, KeyError) as exc:
            raise ConfigurationError(f"bad scenario document: {exc}") from exc

    @classmethod
    def from_json(cls, path: str | Path) -> "ScenarioConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(str(exc)) from exc
        return cls.from_dict(doc)

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def with_uncertainty(self, factor: float) -> "ScenarioConfig":
        el = replace(self.electrical, r_factor=factor, l_factor=factor, c_factor=factor)
        return replace(self, electrical=el, name=f"{self.name}@{factor:g}")


SAG_TIMES = ((1.0, 3.0), (4.0, 6.0), (7.0, 9.0))
SAG_FRACTIONS = ((0.7, 1.0, 1.0), (0.65, 0.65, 1.0), (0.6, 0.6, 0.6))
SAG_LABELS = ("1PG", "2PG", "3PG")


def builtin_case(case_id: int) -> ScenarioConfig:
    """The four reference scenarios (10 s each, v_dc reference 800 V)."""
    p_profile = ((0.0, 150e3), (2.0, 220e3), (4.0, 80e3), (6.0, 150e3))
    if case_id == 1:
        demand = tuple((t, p, 0.0) for t, p in p_profile)
        return ScenarioConfig(name="case1", demand=demand,
                              irradiance=((0.0, 1000.0), (6.0, 300.0), (8.0, 1000.0)), case_id=1)
    if case_id == 2:
        q = {0.0: 100e3, 2.0: 150e3, 4.0: 150e3, 6.0: 100e3}
        demand = tuple((t, p, q[t]) for t, p in p_profile)
        return ScenarioConfig(name="case2", demand=demand,
                              irradiance=((0.0, 1000.0), (6.0, 300.0), (8.0, 1000.0)), case_id=2)
    if case_id in (3, 4):
        sags = tuple(SagSpec(a, b, f) for (a, b), f in zip(SAG_TIMES, SAG_FRACTIONS))
        g = 1000.0 if case_id == 3 else 300.0
        return ScenarioConfig(name=f"case{case_id}", demand=((0.0, 150e3, 0.0),), irradiance=((0.0, g),),
                              sags=sags, case_id=case_id)
    raise ValueError(f"unknown case id {case_id!r}; expected 1..4")


# --------------------------------------------------------------------------
# gains


@dataclass(frozen=True)
class SynthesisReport:
    gains: ControllerGains
    observer: lmi.ObserverSynthesisResult
    feedback: lmi.FeedbackSynthesisResult
    plant: lmi.PolytopicPlant
    seconds: float

    def as_flat(self) -> dict:
        o, f = self.observer, self.feedback
        out = {
            "k_dc": self.gains.k_dc, "lambda": self.gains.lam, "omega_c": self.gains.omega_c,
            "tau_i": self.gains.tau_i, "alpha": o.alpha, "epsilon": o.epsilon, "nu": o.nu,
            "observer_margin": o.margin, "K_dc": o.K_dc.array, "L_dc": o.L_dc,
            "X": f.X, "W": f.W, "Y": f.Y, "F": f.F, "gamma": f.gamma,
            "k1": self.gains.k1, "k2": self.gains.k2,
        }
        for i, m in enumerate(f.margins):
            out[f"vertex_margin_{i}"] = m
        return out


def synth_gains(params: ElectricalParams = ElectricalParams(), *, alpha: float = 50.0, tau_i: float = 2e-3,
                omega_c: float = 1000.0, spread: float = 0.3, path: str | Path | None = None,
                seed: int = 0) -> SynthesisReport:
    """Observer and current-loop synthesis; optionally writes the gains file."""
    t0 = time.monotonic()
    lam = 1.0 / tau_i
    obs = lmi.synth_dc_observer(alpha, seed=seed)
    plant = lmi.PolytopicPlant.rl_box(params.R, params.L, omega_c, spread, tau=1.0 / params.frequency)
    fb = lmi.synth_current_feedback(plant, lam, seed=seed)
    gains = ControllerGains.from_tau_i(tau_i, K_dc=obs.K_dc, L_dc=tuple(float(x) for x in obs.L_dc.ravel()), k1=fb.k1, k2=fb.k2,
                                       omega_c=omega_c)
    rep = SynthesisReport(gains, obs, fb, plant, time.monotonic() - t0)
    if path is not None:
        lmi.write_gains(path, rep.as_flat())
    return rep


@lru_cache(maxsize=8)
def _cached_synthesis(R: float, L: float, frequency: float) -> SynthesisReport:
    return synth_gains(ElectricalParams(R=R, L=L, frequency=frequency))


def gains_from_file(path: str | Path) -> ControllerGains:
    g = lmi.read_gains(path)
    try:
        K = np.asarray(g["K_dc"])
        L = np.asarray(g["L_dc"]).ravel()
        kw = dict(K_dc=SymMatrix(K), L_dc=tuple(float(x) for x in L),
                  k1=float(g["k1"]), k2=float(g["k2"]), k_dc=float(g["k_dc"]))
    except KeyError as exc:
        raise ConfigurationError(f"gains file lacks {exc}") from exc
    for key, name in (("omega_c", "omega_c"), ("lambda", "lam"), ("tau_i", "tau_i")):
        if key in g:
            kw[name] = float(g[key])
    return ControllerGains(**kw)


def resolve_gains(cfg: ScenarioConfig) -> ControllerGains:
    el = cfg.electrical
    if cfg.gains in ("synth", "table"):
        g = _cached_synthesis(el.R, el.L, el.frequency).gains
        if cfg.gains == "table":
            g = replace(g, k1=TABLE_K1, k2=TABLE_K2)
        return replace(g, v_dc_ref=cfg.v_dc_ref)
    return replace(gains_from_file(cfg.gains), v_dc_ref=cfg.v_dc_ref)


# --------------------------------------------------------------------------
# time series and metrics


@dataclass
class TimeSeries:
    channels: dict
    sample_dt: float
    name: str = ""

    @property
    def t(self) -> np.ndarray:
        return self.channels["time_s"]

    def __getitem__(self, key) -> np.ndarray:
        return self.channels[key]

    def window(self, a: float, b: float) -> np.ndarray:
        """Boolean mask of samples with a <= t < b."""
        t = self.t
        eps = 1e-9
        return (t >= a - eps) & (t < b - eps)

    def to_csv(self, path: str | Path, columns: Sequence[str] = CSV_COLUMNS) -> None:
        Path(path).write_text(self.csv_text(columns))

    def csv_text(self, columns: Sequence[str] = CSV_COLUMNS) -> str:
        cols = []
        for c in columns:
            x = self.channels[c]
            if c == "mode":
                cols.append(["sag" if m else "normal" for m in x])
            elif c == "time_s":
                cols.append([f"{v:.7f}" for v in x])
            else:
                cols.append([f"{v:.9g}" for v in x.tolist()])
        lines = [",".join(columns)]
        lines.extend(",".join(row) for row in zip(*cols))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, path: str | Path, name: str = "") -> "TimeSeries":
        text = Path(path).read_text().splitlines()
        header = text[0].split(",")
        data = {h: [] for h in header}
        for line in text[1:]:
            for h, v in zip(header, line.split(",")):
                data[h].append(v)
        ch = {}
        for h, vals in data.items():
            if h == "mode":
                ch[h] = np.array([v == "sag" for v in vals])
            else:
                ch[h] = np.array(vals, dtype=float)
        t = ch["time_s"]
        dt = float(t[1] - t[0]) if len(t) > 1 else 0.0
        return cls(ch, dt, name)


@dataclass(frozen=True)
class IntervalStats:
    start: float
    end: float
    steady_start: float
    means: dict
    mins: dict
    maxs: dict


@dataclass(frozen=True)
class SagStats:
    label: str
    start: float
    end: float
    max_phase_current: tuple
    p_ripple: float
    p_mean: float
    q_mean: float
    thd: tuple
    v_dc_dev: float
    q_dominant_hz: float


@dataclass
class MetricsReport:
    intervals: list
    sags: list
    v_dc_max_dev: float
    v_dc_band: float  # fraction of steady samples within +-0.5 %
    runtime: float = 0.0
    aborted: str | None = None
    verdicts: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.aborted is None and gating_passed(self.verdicts)


@dataclass(frozen=True)
class Verdict:
    name: str
    passed: bool
    detail: str
    gating: bool = True


def _boundaries(cfg: ScenarioConfig) -> list[float]:
    pts = {0.0, cfg.duration}
    pts.update(r[0] for r in cfg.demand if 0 < r[0] < cfg.duration)
    pts.update(r[0] for r in cfg.irradiance if 0 < r[0] < cfg.duration)
    for s in cfg.sags:
        pts.update(x for x in (s.start, s.end) if 0 < x < cfg.duration)
    return sorted(pts)


def _whole_cycles(mask: np.ndarray, per_cycle: int) -> np.ndarray:
    idx = np.flatnonzero(mask)
    if len(idx) < per_cycle:
        return idx[:0]
    n = (len(idx) // per_cycle) * per_cycle
    return idx[len(idx) - n:]


def compute_metrics(ts: TimeSeries, cfg: ScenarioConfig) -> MetricsReport:
    """Interval statistics outside transient windows and per-sag quality figures."""
    keys = ("P_grid_W", "Q_grid_var", "P_pv_W", "P_fc_W", "P_dump_W", "v_dc_V")
    bounds = _boundaries(cfg)
    intervals = []
    steady = np.zeros(len(ts.t), dtype=bool)
    for a, b in zip(bounds, bounds[1:]):
        s = a + TRANSIENT_WINDOW
        m = ts.window(s, b)
        steady |= m
        if not m.any():
            continue
        intervals.append(IntervalStats(a, b, s, {k: float(ts[k][m].mean()) for k in keys},
                                       {k: float(ts[k][m].min()) for k in keys},
                                       {k: float(ts[k][m].max()) for k in keys}))
    dev = np.abs(ts["v_dc_V"][steady] - cfg.v_dc_ref) if steady.any() else np.zeros(1)
    fs = 1.0 / ts.sample_dt
    f0 = cfg.electrical.frequency
    per_cycle = int(round(fs / f0))
    sags = []
    for k, s in enumerate(cfg.sags):
        label = SAG_LABELS[k] if cfg.case_id in (3, 4) and k < 3 else f"sag{k}"
        whole = ts.window(s.start, s.end)
        imax = tuple(float(np.max(np.abs(ts[c][whole]))) for c in ("i_a_A", "i_b_A", "i_c_A"))
        m = ts.window(s.start + TRANSIENT_WINDOW, s.end)
        idx = _whole_cycles(m, per_cycle)
        p = ts["P_grid_W"][idx]
        q = ts["Q_grid_var"][idx]
        pm = float(p.mean())
        ripple = float((p.max() - p.min()) / abs(pm)) if pm else math.inf
        thds = []
        for c in ("i_a_A", "i_b_A", "i_c_A"):
            try:
                thds.append(thd(ts[c][idx], f0, fs, 40))
            except UndefinedTHD:
                thds.append(math.inf)
        qa = q - q.mean()
        spec = np.abs(np.fft.rfft(qa))
        freqs = np.fft.rfftfreq(len(qa), 1.0 / fs)
        qdom = float(freqs[int(np.argmax(spec[1:])) + 1]) if len(spec) > 1 else 0.0
        vdev = float(np.max(np.abs(ts["v_dc_V"][idx] - cfg.v_dc_ref)))
        sags.append(SagStats(label, s.start, s.end, imax, ripple, pm, float(q.mean()), tuple(thds), vdev, qdom))
    return MetricsReport(intervals, sags, float(dev.max()),
                         float(np.mean(dev <= 0.005 * cfg.v_dc_ref)) if steady.any() else 1.0)


# --------------------------------------------------------------------------
# simulation


def run_scenario(cfg: ScenarioConfig, gains: ControllerGains | None = None, *,
                 reference: MetricsReport | None = None) -> tuple[TimeSeries, MetricsReport]:
    """Simulate ``cfg`` and extract metrics; verdicts are attached for builtin cases.

    Case 2 verdicts compare real power against a case 1 run with the same
    electrical parameters; pass ``reference`` to reuse one, otherwise it is run here.
    """
    t_start = time.monotonic()
    if gains is None:
        gains = resolve_gains(cfg)
    ts, aborted = _simulate(cfg, gains)
    rep = compute_metrics(ts, cfg) if not aborted else MetricsReport([], [], math.inf, 0.0)
    rep.aborted = aborted
    rep.runtime = time.monotonic() - t_start
    if cfg.case_id is not None and not aborted:
        if cfg.case_id == 2 and reference is None:
            ref_cfg = replace(builtin_case(1), electrical=cfg.electrical, gains=cfg.gains, dt=cfg.dt)
            reference = run_scenario(ref_cfg, gains)[1]
        rep.verdicts = case_verdicts(cfg.case_id, ts, rep, cfg, reference)
    return ts, rep


def _simulate(cfg: ScenarioConfig, gains: ControllerGains) -> tuple[TimeSeries, str | None]:
    el = cfg.electrical
    dt = cfg.dt
    n_steps = int(round(cfg.duration / dt))
    spc = int(round(1.0 / (el.frequency * dt)))  # samples per cycle
    quarter = spc // 4
    v_hat = el.v_hat
    limits = cfg.limits
    i_max = limits.I_rated

    # grid voltages for steps -quarter .. n_steps, phase and alpha-beta
    k = np.arange(-quarter, n_steps + 1)
    th = el.omega * k * dt
    fa = np.ones_like(th)
    fb = np.ones_like(th)
    fc = np.ones_like(th)
    tk = k * dt
    for s in cfg.sags:
        m = (tk >= s.start - 1e-12) & (tk < s.end - 1e-12)
        fa[m], fb[m], fc[m] = s.fractions
    va_ph = fa * v_hat * np.cos(th)
    vb_ph = fb * v_hat * np.cos(th - 2 * np.pi / 3)
    vc_ph = fc * v_hat * np.cos(th + 2 * np.pi / 3)
    v_al = ((2.0 / 3.0) * (va_ph - 0.5 * vb_ph - 0.5 * vc_ph)).tolist()
    v_be = ((vb_ph - vc_ph) / SQRT3).tolist()
    va_l, vb_l, vc_l = va_ph.tolist(), vb_ph.tolist(), vc_ph.tolist()
    off = quarter

    ems_every = int(round(cfg.ems_period / dt))
    mppt_every = max(1, int(round(cfg.mppt_period / dt)))
    dec = cfg.decimation

    demand_t = [r[0] for r in cfg.demand]
    irr_t = [r[0] for r in cfg.irradiance]

    def sched(times, rows, t):
        j = 0
        while j + 1 < len(times) and times[j + 1] <= t + 1e-12:
            j += 1
        return rows[j]

    # controller constants use nominal parameters; the plant uses the perturbed ones
    C_nom = el.C
    k_dc, v_ref = gains.k_dc, gains.v_dc_ref
    k1, k2, wc = gains.k1, gains.k2, gains.omega_c
    g_fb = k1 - k2
    fc_par = cfg.fc
    stack_base = fc_par.stack_rating
    n_stacks = fc_par.stacks

    rng = np.random.default_rng(cfg.seed)
    noisy = cfg.noise_dc > 0 or cfg.noise_ac > 0
    n_ticks = n_steps // ems_every + 2
    if noisy:
        nz_dc = (cfg.noise_dc * rng.standard_normal(n_ticks)).tolist()
        nz_a = (cfg.noise_ac * rng.standard_normal(n_ticks)).tolist()
        nz_b = (cfg.noise_ac * rng.standard_normal(n_ticks)).tolist()
    zdc = za = zb = 0.0

    gi = GridInterface(el, dt, cfg.v_dc_ref)
    obs = DcObserver(gains.observer_gain, dt, cfg.v_dc_ref, 0.0)
    tracker = AmplitudeTracker(spc, v_hat)
    sag = SagStatus(False, (v_hat,) * 3, 1.0, None, v_hat)

    # repetitive-controller delay lines, both axes share one write pointer
    xa_buf = [0.0] * spc
    xb_buf = [0.0] * spc
    ea_buf = [0.0] * spc
    eb_buf = [0.0] * spc
    ptr = 0
    xa = xb = 0.0
    frozen = False

    # PV
    g_now = sched(irr_t, cfg.irradiance, 0.0)[1]
    curve = pv_curve(float(g_now), 25.0, cfg.pv)
    v_pv = 0.8 * curve.voc
    duty = 1.0 - v_pv / cfg.v_dc_ref
    p_pv = curve.power(v_pv)
    mppt_prev = (p_pv, v_pv)
    pre_sag_duty = duty

    # FC and dump
    p_fc = 0.0
    p_dump = 0.0
    decision = None
    mode_sag = False
    p_fc_ref = 0.0
    q_ref = 0.0
    p_grid_sag = 0.0
    pre_sag_p = 0.0
    p_avail = p_pv
    u = 0.0

    # references at step 0
    P_ref = p_pv
    ira = irb = 0.0
    try:
        i0 = current_refs_normal(AlphaBeta(v_al[off], v_be[off]), P_ref, q_ref)
        ira, irb = i0
    except DegenerateVoltage:
        pass

    n_rec = n_steps // dec + 1
    rec = {c: np.zeros(n_rec) for c in CSV_COLUMNS if c != "mode"}
    rec_mode = np.zeros(n_rec, dtype=bool)
    r = 0
    aborted = None
    tick = 0

    def record(n):
        nonlocal r
        j = n + off
        ia, ib = gi.ia, gi.ib
        a_, b_ = v_al[j], v_be[j]
        rec["time_s"][r] = n * dt
        rec["v_dc_V"][r] = gi.v_dc
        rec["i_a_A"][r] = ia
        rec["i_b_A"][r] = -0.5 * ia + 0.5 * SQRT3 * ib
        rec["i_c_A"][r] = -0.5 * ia - 0.5 * SQRT3 * ib
        rec["v_a_V"][r] = va_l[j]
        rec["v_b_V"][r] = vb_l[j]
        rec["v_c_V"][r] = vc_l[j]
        rec["P_grid_W"][r] = 1.5 * (a_ * ia + b_ * ib)
        rec["Q_grid_var"][r] = 1.5 * (b_ * ia - a_ * ib)
        rec["P_pv_W"][r] = p_pv
        rec["P_fc_W"][r] = p_fc
        rec["P_dump_W"][r] = p_dump
        rec_mode[r] = mode_sag
        r += 1

    try:
        for n in range(n_steps):
            j = n + off
            t = n * dt
            if n % dec == 0:
                record(n)
            tracker.push(va_l[j], vb_l[j], vc_l[j])

            # ---- supervisory tick
            if n % ems_every == 0:
                if noisy:
                    zdc, za, zb = nz_dc[tick], nz_a[tick], nz_b[tick]
                tick += 1
                g_new = sched(irr_t, cfg.irradiance, t)[1]
                if g_new != g_now:
                    g_now = g_new
                    curve = pv_curve(float(g_now), 25.0, cfg.pv)
                _, P_star, Q_star = sched(demand_t, cfg.demand, t)
                sag = detect_sag(tracker.amplitudes, v_hat, sag, t)
                v = gi.v_dc
                if sag.active and not mode_sag:
                    mode_sag = True
                    pre_sag_duty = duty
                    p_avail = p_pv
                    pre_sag_p = decision.P_clamped if decision is not None else P_ref
                    decision = ems_step(Demand(P_star, Q_star), p_pv, sag, limits, pre_sag_p_grid=pre_sag_p,
                                        p_pv_avail=p_avail, p_fc_meas=p_fc, policy=cfg.policy)
                    p_grid_sag = decision.P_grid_ref
                    obs.xi -= p_grid_sag / (C_nom * v)
                elif not sag.active and mode_sag:
                    mode_sag = False
                    obs.xi += p_grid_sag / (C_nom * v)
                    duty = pre_sag_duty
                    v_pv = (1.0 - duty) * v
                    p_pv = curve.power(v_pv)
                    mppt_prev = (p_pv, v_pv)
                if mode_sag:
                    decision = ems_step(Demand(P_star, Q_star), p_pv, sag, limits, pre_sag_p_grid=pre_sag_p,
                                        p_pv_avail=p_avail, p_fc_meas=p_fc, policy=cfg.policy)
                    new_p = decision.P_grid_ref
                    if new_p != p_grid_sag:
                        # keep the dc-loop model consistent when the grid share moves
                        obs.xi -= (new_p - p_grid_sag) / (C_nom * v)
                        p_grid_sag = new_p
                else:
                    decision = ems_step(Demand(P_star, Q_star), p_pv, None, limits, policy=cfg.policy)
                p_fc_ref = decision.P_fc_ref
                q_ref = decision.Q_grid_ref
                p_dump = decision.P_dump_ref

            # ---- PV converter and MPPT
            v = gi.v_dc
            if not mode_sag:
                if n % mppt_every == 0 and n > 0:
                    duty += mppt_po(p_pv, v_pv, mppt_prev, cfg.mppt_step)
                    duty = min(max(duty, 0.0), 0.99)
                    mppt_prev = (p_pv, v_pv)
                v_pv = (1.0 - duty) * v
                p_pv = curve.power(v_pv)

            # ---- dc loop
            xi = obs.xi
            u = k_dc * (v - v_ref) + xi
            if mode_sag:
                p_cmd = -C_nom * u * v  # PV supplies the negative of the requested dc-side draw
                p_pv = min(max(p_cmd, 0.0), curve.p_mpp)
                u_real = -p_pv / (C_nom * v)
                v_pv = curve.voltage_for_power(p_pv)
                duty = 1.0 - v_pv / v
                P_ref = p_grid_sag
            else:
                u_real = u
                P_ref = p_pv + C_nom * v * u
            obs.step(v, u_real)

            # ---- current references at the end of the step
            j1 = j + 1
            try:
                if mode_sag:
                    ir = current_refs_sag(AlphaBeta(v_al[j1], v_be[j1]),
                                          AlphaBeta(v_al[j1 - quarter], v_be[j1 - quarter]), P_ref, q_ref)
                else:
                    ir = current_refs_normal(AlphaBeta(v_al[j1], v_be[j1]), P_ref, q_ref)
                ira1, irb1 = ir
                mag = math.hypot(ira1, irb1)
                if mag > i_max:
                    ira1 *= i_max / mag
                    irb1 *= i_max / mag
            except DegenerateVoltage:
                ira1, irb1 = ira, irb

            # ---- repetitive controller (forward Euler, delayed taps)
            ia, ib = gi.ia, gi.ib
            ea, eb = ira - ia, irb - ib
            xda, xdb, eda, edb = xa_buf[ptr], xb_buf[ptr], ea_buf[ptr], eb_buf[ptr]
            xa_buf[ptr], xb_buf[ptr], ea_buf[ptr], eb_buf[ptr] = xa, xb, ea, eb
            ptr += 1
            if ptr == spc:
                ptr = 0
            if frozen:
                xa1, xb1 = xa, xb
            else:
                xa1 = xa + dt * wc * (xda + eda - xa)
                xb1 = xb + dt * wc * (xdb + edb - xb)

            # ---- FC stack power under proportional duty control
            d_fc = fc_power_control(p_fc_ref / n_stacks, p_fc / n_stacks, stack_base)
            p_fc_new = fc_step(fc_demand_from_duty(d_fc, fc_par.rated), p_fc, dt, fc_par)

            # ---- plant
            gi.step(k2 * (ira + xa), k2 * (irb + xb), k2 * (ira1 + xa1), k2 * (irb1 + xb1), g_fb,
                    v_al[j], v_be[j], v_al[j1], v_be[j1],
                    p_pv + 0.5 * (p_fc + p_fc_new), p_dump, za, zb, zdc)
            frozen = gi.saturated
            p_fc = p_fc_new
            ira, irb, xa, xb = ira1, irb1, xa1, xb1
        if n_steps % dec == 0:
            record(n_steps)
    except (DcCollapse, ModelFault) as exc:
        aborted = str(exc)
    if not all(math.isfinite(x) for x in (gi.v_dc, gi.ia, gi.ib)):
        aborted = aborted or "non-finite state"
    channels = {c: rec[c][:r] for c in rec}
    channels["mode"] = rec_mode[:r]
    return TimeSeries(channels, dt * dec, cfg.name), aborted


# --------------------------------------------------------------------------
# acceptance verdicts

CASE1_P = (150e3, 200e3, 80e3, 129.5e3, 150e3)
CASE1_FC = (50e3, 100e3, 0.0, 100e3, 50e3)
CASE2_Q = (100e3, None, 150e3, 100e3, 100e3)
CALIBRATION_Q = {"1PG": 75e3, "2PG": 100e3, "3PG": 14e3}


def _within(x: float, target: float, rel: float) -> bool:
    return abs(x - target) <= rel * abs(target)


def case_verdicts(case_id: int, ts: TimeSeries, rep: MetricsReport, cfg: ScenarioConfig,
                  reference: MetricsReport | None = None) -> list[Verdict]:
    out: list[Verdict] = []
    iv = rep.intervals
    pm = [s.means["P_grid_W"] for s in iv]
    if case_id == 1:
        ok = len(pm) == 5 and all(_within(a, b, 0.02) for a, b in zip(pm, CASE1_P))
        out.append(Verdict("P_grid interval means", ok, _fmt_k(pm, CASE1_P, "+-2%")))
    if case_id == 2:
        if reference is None:
            raise ValueError("case 2 verdicts need a case 1 reference report")
        ref = [s.means["P_grid_W"] for s in reference.intervals]
        ok = len(pm) == len(ref) == 5 and all(_within(a, b, 0.02) for a, b in zip(pm, ref))
        out.append(Verdict("P_grid matches case 1 run", ok, _fmt_k(pm, ref, "+-2%")))
        ok = len(pm) == 5 and all(_within(a, b, 0.02) for a, b in zip(pm, CASE1_P))
        out.append(Verdict("P_grid vs case 1 nominal levels", ok, _fmt_k(pm, CASE1_P, "+-2%"), gating=False))
    if case_id == 1:
        fm = [s.means["P_fc_W"] for s in iv]
        ok = len(fm) == 5 and all(abs(a - b) <= 0.03 * max(b, cfg.fc.rated) if b == 0 else _within(a, b, 0.03)
                                  for a, b in zip(fm, CASE1_FC))
        out.append(Verdict("P_fc interval means", ok, _fmt_k(fm, CASE1_FC, "+-3%")))
        dm = iv[2].means["P_dump_W"] if len(iv) > 2 else math.nan
        out.append(Verdict("P_dump on [4,6] s", _within(dm, 20e3, 0.05), f"{dm / 1e3:.2f} kW vs 20 kW +-5%"))
        steady = np.zeros(len(ts.t), dtype=bool)
        for s in iv:
            steady |= ts.window(s.steady_start, s.end)
        qmax = float(np.max(np.abs(ts["Q_grid_var"][steady])))
        out.append(Verdict("Q_grid within +-2 kvar", qmax <= 2e3, f"max |Q| {qmax / 1e3:.3f} kvar"))
    if case_id in (1, 2):
        out.append(Verdict("v_dc steady band", rep.v_dc_max_dev <= 0.005 * cfg.v_dc_ref,
                           f"max |v_dc - 800| {rep.v_dc_max_dev:.3f} V (limit 4 V)"))
    if case_id == 2:
        qm = [s.means["Q_grid_var"] for s in iv]
        ok = len(qm) == 5
        if ok:
            for a, b in zip(qm, CASE2_Q):
                ok &= (89e3 <= a <= 95e3) if b is None else _within(a, b, 0.02)
        out.append(Verdict("Q_grid interval means", ok,
                           "[" + ", ".join(f"{q / 1e3:.2f}" for q in qm) + "] kvar vs 100/[89,95]/150/100/100"))
    if case_id in (3, 4):
        i_lim = 1.02 * cfg.limits.I_rated
        for s in rep.sags:
            peak = max(s.max_phase_current)
            out.append(Verdict(f"{s.label} phase currents <= rated+2%", peak <= i_lim,
                               f"peak {peak:.1f} A vs {i_lim:.1f} A"))
            out.append(Verdict(f"{s.label} Q_grid > 0", s.q_mean > 0, f"mean Q {s.q_mean / 1e3:.2f} kvar"))
            if s.label in ("1PG", "2PG"):
                out.append(Verdict(f"{s.label} P ripple < 5%", s.p_ripple < 0.05, f"{100 * s.p_ripple:.3f}%"))
                worst = max(s.thd)
                out.append(Verdict(f"{s.label} current THD < 5%", worst < 5.0,
                                   "THD " + "/".join(f"{x:.3f}" for x in s.thd) + " %"))
                out.append(Verdict(f"{s.label} Q oscillates at 120 Hz", abs(s.q_dominant_hz - 120.0) < 1.0,
                                   f"dominant line {s.q_dominant_hz:.1f} Hz"))
            if s.label == "2PG":
                out.append(Verdict("2PG v_dc within +-0.5%", s.v_dc_dev <= 0.005 * cfg.v_dc_ref,
                                   f"max dev {s.v_dc_dev:.3f} V"))
            target = CALIBRATION_Q.get(s.label)
            if target is not None:
                out.append(Verdict(f"{s.label} mean Q near {target / 1e3:.0f} kvar (calibration)",
                                   _within(s.q_mean, target, 0.2), f"{s.q_mean / 1e3:.2f} kvar +-20%",
                                   gating=False))
    if case_id == 4:
        normal = [s for s in iv if not any(g.start <= s.start < g.end for g in cfg.sags)]
        pm = [s.means["P_grid_W"] for s in normal]
        ok = bool(pm) and all(_within(p, 129.5e3, 0.03) for p in pm)
        out.append(Verdict("normal-interval P_grid 129.5 kW +-3%", ok,
                           "[" + ", ".join(f"{p / 1e3:.2f}" for p in pm) + "] kW"))
    return out


def _fmt_k(vals, targets, tol) -> str:
    return ("[" + ", ".join(f"{v / 1e3:.2f}" for v in vals) + "] kW vs ["
            + ", ".join(f"{t / 1e3:.1f}" for t in targets) + f"] {tol}")


def gating_passed(verdicts: Sequence[Verdict]) -> bool:
    return all(v.passed for v in verdicts if v.gating)
