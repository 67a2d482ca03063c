"""Event-driven transient simulation of the behavioral active rectifier.

The rectifier is a full-wave bridge abstracted as two comparator-driven
switches with body diodes, fed from a sinusoidal EMF behind a source
resistance and loading an on-chip filter capacitor. The output is a single
state integrated with fixed-step RK4; comparator trips are located by linear
interpolation inside a step and switch transitions land exactly after the
comparator delay by splitting the step. The cycle loop lives in the kernel
(:mod:`wptsim.kernel`); this module wraps it per carrier cycle so the delay
compensators can update between cycles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import delay_comp
from ._layout import (
    E_BRANCH, E_CONDUCTED, E_CROSS, E_E_OUT, E_E_PORT, E_E_SRC, E_FORCED_OPEN,
    E_IC, E_INT_V, E_IS, E_Q_AUX, E_Q_RECT, E_Q_RES, E_T_CLOSE, E_T_OPEN,
    E_V_END, E_V_START, E_VC, E_VS, N_EVENTS, N_PARAMS, N_REC, N_STATE,
    P_AMP, P_CF, P_DLINE, P_H, P_IAUX, P_OMEGA, P_PERIOD, P_RLOAD, P_RON,
    P_RSRC, P_RSUB, P_TOFF, P_TON, P_VDIODE, S_PEND_CLOSE, S_PEND_OPEN, S_T,
    S_V,
)
from .kernel import run_cycle

STEADY_REL = 1e-3
STEADY_RUN = 3


class SimulationError(RuntimeError):
    """Integration aborted; ``t`` is the simulation time of the failure."""

    def __init__(self, message, t=float("nan")):
        super().__init__(message)
        self.t = t


class SteadyStateError(ValueError):
    pass


@dataclass(frozen=True)
class RectifierConfig:
    """Behavioral rectifier parameters.

    ``r_src_ac``, ``r_on`` and ``i_aux`` are calibration knobs, tuned once so
    the compensated rectifier lands on the target VCR and PCE at 700 ohm. They
    are not measured device values.
    """

    v_ac_amp: float = 2.0
    f0: float = 40.68e6
    r_src_ac: float = 5.4
    r_on: float = 1.2
    v_diode: float = 0.6
    t_cmp_on: float = 1e-9
    t_cmp_off: float = 1e-9
    c_filter: float = 0.5e-9
    r_load: float = 700.0
    i_aux: float = 130e-6
    dt_max: float | None = None
    r_substitute: float | None = None

    def __post_init__(self):
        for name in ("v_ac_amp", "f0", "r_src_ac", "r_on", "v_diode",
                     "c_filter", "r_load"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.t_cmp_on < 0 or self.t_cmp_off < 0:
            raise ValueError("comparator delays must be non-negative")
        if max(self.t_cmp_on, self.t_cmp_off) >= self.period / 2:
            raise ValueError("comparator delays must be shorter than half a carrier period")
        if self.i_aux < 0:
            raise ValueError("i_aux must be non-negative")
        if self.dt_max is not None and not 0 < self.dt_max <= self.period / 200:
            raise ValueError("dt_max must be positive and at most period/200")
        if self.r_substitute is not None and self.r_substitute <= 0:
            raise ValueError("r_substitute must be positive")
        # explicit RK4 goes unstable once the step nears 2.8x the conduction time constant
        tau = self.r_src_ac * self.c_filter
        if self.period / self.steps_per_cycle > 2 * tau:
            raise ValueError(
                f"integration step {self.period / self.steps_per_cycle:.3g} s is too long for "
                f"the conduction time constant {tau:.3g} s; lower dt_max")

    @property
    def period(self) -> float:
        return 1.0 / self.f0

    @property
    def steps_per_cycle(self) -> int:
        if self.dt_max is None:
            return 2000
        n = math.ceil(self.period / self.dt_max)
        return n + (n % 2)


def estimate_output_voltage(cfg: RectifierConfig) -> float:
    """Steady output of an ideal-timing rectifier with series R = r_src + r_on.

    Solves the conduction-angle balance pi*R*sin(th)/R_L = 2cos(th) - (pi-2th)sin(th)
    by bisection; used only to start simulations near steady state.
    """
    r = cfg.r_src_ac + cfg.r_on
    lo, hi = 1e-9, math.pi / 2 - 1e-12

    def g(th):
        return (math.pi * r * math.sin(th) / cfg.r_load
                - (2 * math.cos(th) - (math.pi - 2 * th) * math.sin(th)))

    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            hi = mid
        else:
            lo = mid
    return cfg.v_ac_amp * math.sin(0.5 * (lo + hi))


@dataclass
class CycleRecord:
    index: int
    t0: float
    v_mean: float
    v_s: np.ndarray
    residual: np.ndarray
    v_c: np.ndarray


@dataclass(frozen=True)
class TraceRecord:
    """Time samples plus one row per carrier cycle.

    Cycle arrays with a trailing dimension of 4 follow
    :data:`wptsim.delay_comp.EDGE_KEYS`; cycles start at the positive zero
    crossings of the input.
    """

    config: RectifierConfig
    t: np.ndarray
    v_ac: np.ndarray
    v_out: np.ndarray
    i_load: np.ndarray
    sw1: np.ndarray
    sw2: np.ndarray
    cycle_t0: np.ndarray
    amp: np.ndarray
    r_load: np.ndarray
    v_mean: np.ndarray
    v_start: np.ndarray
    v_end: np.ndarray
    v_s: np.ndarray
    v_c: np.ndarray
    slope_trip: np.ndarray
    residual: np.ndarray
    t_switch: np.ndarray
    conducted: np.ndarray
    forced_open: np.ndarray
    q_rect: np.ndarray
    q_load: np.ndarray
    e_src: np.ndarray
    e_out: np.ndarray
    e_port: np.ndarray
    fundamental: np.ndarray
    cross_conduction: np.ndarray
    disturbance_cycles: tuple = field(default=())

    @property
    def n_cycles(self) -> int:
        return len(self.cycle_t0)

    @property
    def vcr(self) -> np.ndarray:
        return self.v_mean / self.amp

    @property
    def pce(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.e_out / self.e_src

    def charge_error(self) -> float:
        """Worst relative charge-balance error over all cycles."""
        dq_cap = self.config.c_filter * (self.v_end - self.v_start)
        err = np.abs(self.q_rect - self.q_load - dq_cap)
        scale = max(float(np.sum(np.abs(self.q_rect))), 1e-30)
        return float(np.sum(err) / scale)

    def to_csv(self, samples_path, cycles_path) -> None:
        with open(samples_path, "w") as fh:
            fh.write("t_s,v_ac_V,v_out_V,i_load_A,sw1,sw2\n")
            for row in zip(self.t, self.v_ac, self.v_out, self.i_load, self.sw1, self.sw2):
                fh.write(f"{row[0]:.9g},{row[1]:.9g},{row[2]:.9g},{row[3]:.9g},"
                         f"{int(row[4])},{int(row[5])}\n")
        vcr = self.vcr
        pce = self.pce
        with open(cycles_path, "w") as fh:
            fh.write("cycle,on_err_V,off_err_V,vcr,pce\n")
            for k in range(self.n_cycles):
                fh.write(f"{k},{self.v_s[k, 0]:.9g},{self.v_s[k, 1]:.9g},"
                         f"{vcr[k]:.9g},{pce[k]:.9g}\n")


class Simulator:
    """Cycle-by-cycle driver of the kernel with optional closed-loop compensation.

    ``bank`` maps :data:`~wptsim.delay_comp.EDGE_KEYS` to compensator states;
    ``None`` runs the uncompensated rectifier (zero offsets, OFF edge sensed
    on the conduction voltage, no delay line).
    """

    def __init__(self, cfg: RectifierConfig, bank=None, *, adapt=True,
                 record_stride=0, v_out0=None):
        self.cfg = cfg
        self.bank = dict(bank) if bank is not None else None
        self.adapt = adapt and bank is not None
        self.record_stride = record_stride
        self.n_steps = cfg.steps_per_cycle
        self.P = np.zeros(N_PARAMS)
        self.S = np.zeros(N_STATE)
        self.S[S_PEND_CLOSE:S_PEND_OPEN + 3] = -1.0
        self.S[S_V] = estimate_output_voltage(cfg) if v_out0 is None else v_out0
        self.E = np.zeros(N_EVENTS)
        n_rec = self.n_steps // record_stride if record_stride > 0 else 0
        self._rec = np.zeros((n_rec, N_REC))
        self._rows = []
        self._samples = []
        self.disturbance_cycles = []
        self._load_params(cfg)

    def _load_params(self, cfg):
        P = self.P
        P[P_AMP] = cfg.v_ac_amp
        P[P_OMEGA] = 2 * math.pi * cfg.f0
        P[P_RSRC] = cfg.r_src_ac
        P[P_RON] = cfg.r_on
        P[P_VDIODE] = cfg.v_diode
        P[P_TON] = cfg.t_cmp_on
        P[P_TOFF] = cfg.t_cmp_off
        P[P_CF] = cfg.c_filter
        P[P_RLOAD] = cfg.r_load
        P[P_IAUX] = cfg.i_aux
        P[P_H] = cfg.period / self.n_steps
        P[P_PERIOD] = cfg.period
        P[P_RSUB] = cfg.r_substitute or 0.0
        dl = 0.0
        if self.bank is not None:
            dl = self.bank["p_off"].off_delay_line or 0.0
        P[P_DLINE] = dl

    @property
    def t(self) -> float:
        return float(self.S[S_T])

    @property
    def v_out(self) -> float:
        return float(self.S[S_V])

    @property
    def n_cycles(self) -> int:
        return len(self._rows)

    def set(self, **changes):
        """Apply a parameter step (e.g. ``r_load`` or ``v_ac_amp``) from the next cycle."""
        self.cfg = replace(self.cfg, **changes)
        self._load_params(self.cfg)
        self.disturbance_cycles.append(len(self._rows))

    def offsets(self) -> np.ndarray:
        if self.bank is None:
            return np.zeros(4)
        return np.array([self.bank[k].v_c for k in delay_comp.EDGE_KEYS], dtype=float)

    def step(self) -> CycleRecord:
        O = self.offsets()
        t0 = self.t
        try:
            nrec = run_cycle(self.S, self.P, O, self.E, self.n_steps, self._rec,
                             self.record_stride)
        except FloatingPointError as exc:
            raise SimulationError(str(exc), self.t) from exc
        E = self.E
        if E[E_CROSS] > 0:
            raise SimulationError("cross-conduction of both branches", self.t)
        if not math.isfinite(E[E_V_END]):
            raise SimulationError("non-finite output voltage", self.t)
        k = len(self._rows)
        samples = [delay_comp.sample_error(E, 0 if key[0] == "p" else 1,
                                           delay_comp.ON if key.endswith("on") else delay_comp.OFF, k)
                   for key in delay_comp.EDGE_KEYS]
        if self.adapt:
            self.bank, _ = delay_comp.step_bank(self.bank, E, k)
        v_s = np.array([s.v_s if s else np.nan for s in samples])
        res = np.array([s.residual_delay if s else np.nan for s in samples])
        slope = np.array([s.slope if s else np.nan for s in samples])
        period = self.cfg.period
        self._rows.append((
            t0, self.cfg.v_ac_amp, self.cfg.r_load, E[E_INT_V] / period,
            E[E_V_START], E[E_V_END], v_s, O, slope, res,
            np.array([E[E_T_CLOSE], E[E_T_OPEN], E[E_BRANCH + E_T_CLOSE],
                      E[E_BRANCH + E_T_OPEN]]),
            (E[E_CONDUCTED], E[E_BRANCH + E_CONDUCTED]),
            (E[E_FORCED_OPEN], E[E_BRANCH + E_FORCED_OPEN]),
            E[E_Q_RECT], E[E_Q_RES] + E[E_Q_AUX], E[E_E_SRC], E[E_E_OUT],
            E[E_E_PORT], (E[E_VC], E[E_VS], E[E_IC], E[E_IS]), E[E_CROSS],
        ))
        if nrec:
            self._samples.append((self._rec[:nrec].copy(), self.cfg.v_ac_amp,
                                  self.cfg.r_load))
        return CycleRecord(k, t0, E[E_INT_V] / period, v_s, res, O)

    def run(self, n_cycles: int):
        for _ in range(n_cycles):
            self.step()

    def warm_up(self, max_cycles=None) -> int:
        """Step with frozen compensation until the output is steady.

        Returns the number of cycles run. ``max_cycles`` defaults to 400.
        """
        limit = 400 if max_cycles is None else max_cycles
        adapt = self.adapt
        self.adapt = False
        means = []
        run = 0
        n = 0
        try:
            while n < limit:
                means.append(self.step().v_mean)
                n += 1
                if len(means) > 1 and abs(means[-1] - means[-2]) < STEADY_REL * abs(means[-2]):
                    run += 1
                    if run >= STEADY_RUN:
                        break
                else:
                    run = 0
        finally:
            self.adapt = adapt
        return n

    def trace(self) -> TraceRecord:
        rows = self._rows
        col = list(zip(*rows)) if rows else [()] * 20
        if self._samples:
            t_parts, vac, iload = [], [], []
            for rec, amp, rl in self._samples:
                t_parts.append(rec)
                vac.append(amp * np.sin(2 * math.pi * self.cfg.f0 * rec[:, 0]))
                iload.append(rec[:, 1] / rl)
            samp = np.concatenate(t_parts)
            vac = np.concatenate(vac)
            iload = np.concatenate(iload)
        else:
            samp = np.zeros((0, N_REC))
            vac = iload = np.zeros(0)

        def arr(i, shape=None):
            a = np.array(col[i], dtype=float)
            if shape is not None and a.size == 0:
                a = a.reshape((0,) + shape)
            a.setflags(write=False)
            return a

        out = TraceRecord(
            config=self.cfg,
            t=samp[:, 0].copy(), v_ac=vac, v_out=samp[:, 1].copy(),
            i_load=iload, sw1=samp[:, 2].copy(), sw2=samp[:, 3].copy(),
            cycle_t0=arr(0), amp=arr(1), r_load=arr(2), v_mean=arr(3),
            v_start=arr(4), v_end=arr(5), v_s=arr(6, (4,)), v_c=arr(7, (4,)),
            slope_trip=arr(8, (4,)), residual=arr(9, (4,)),
            t_switch=arr(10, (4,)), conducted=arr(11, (2,)),
            forced_open=arr(12, (2,)), q_rect=arr(13), q_load=arr(14),
            e_src=arr(15), e_out=arr(16), e_port=arr(17),
            fundamental=arr(18, (4,)), cross_conduction=arr(19),
            disturbance_cycles=tuple(self.disturbance_cycles),
        )
        for a in (out.t, out.v_ac, out.v_out, out.i_load, out.sw1, out.sw2):
            a.setflags(write=False)
        return out


def simulate(cfg: RectifierConfig, comp=None, duration: float | None = None,
             disturbances=(), *, adapt=True, record_stride=1, v_out0=None,
             n_cycles: int | None = None) -> TraceRecord:
    """Run the rectifier for ``duration`` seconds (rounded up to whole cycles).

    ``comp`` is a compensator bank (see :func:`wptsim.delay_comp.default_bank`)
    or ``None``. ``disturbances`` is a sequence of ``(time, name, value)``
    steps to ``r_load`` or ``v_ac_amp``; each takes effect at the first cycle
    starting at or after its time. ``adapt=False`` freezes the compensators.
    """
    if n_cycles is None:
        if duration is None:
            raise ValueError("give duration or n_cycles")
        n_cycles = math.ceil(duration / cfg.period - 1e-9)
    if n_cycles < 5:
        raise ValueError("duration must cover at least 5 carrier periods")
    steps = sorted(disturbances, key=lambda d: d[0])
    for _, name, _ in steps:
        if name not in ("r_load", "v_ac_amp"):
            raise ValueError(f"unsupported disturbance {name!r}")
    sim = Simulator(cfg, comp, adapt=adapt, record_stride=record_stride, v_out0=v_out0)
    i = 0
    for _ in range(n_cycles):
        while i < len(steps) and steps[i][0] <= sim.t + 1e-15:
            sim.set(**{steps[i][1]: steps[i][2]})
            i += 1
        sim.step()
    return sim.trace()


def steady_start(trace: TraceRecord, start_cycle: int | None = None) -> int:
    """First cycle of the steady tail: 3 consecutive cycle means within 0.1%."""
    if start_cycle is None:
        start_cycle = trace.disturbance_cycles[-1] if trace.disturbance_cycles else 0
    m = trace.v_mean
    run = 0
    for k in range(start_cycle + 1, len(m)):
        if abs(m[k] - m[k - 1]) < STEADY_REL * max(abs(m[k - 1]), 1e-12):
            run += 1
            if run >= STEADY_RUN:
                first = k - STEADY_RUN
                if len(m) - first >= STEADY_RUN:
                    return first
        else:
            run = 0
    raise SteadyStateError("no steady state reached; run a longer simulation")


def measure_vcr(trace: TraceRecord, start_cycle=None) -> float:
    """Mean output over the steady cycles divided by the input peak amplitude."""
    k = steady_start(trace, start_cycle)
    return float(np.mean(trace.v_mean[k:]) / trace.amp[-1])


def measure_pce(trace: TraceRecord, start_cycle=None) -> float:
    """Load energy over input energy across the steady cycles."""
    k = steady_start(trace, start_cycle)
    return float(np.sum(trace.e_out[k:]) / np.sum(trace.e_src[k:]))


def measure_equivalent_resistance(trace: TraceRecord, start_cycle=None) -> float:
    """|V1|/|I1| of the fundamental at the rectifier's AC port."""
    k = steady_start(trace, start_cycle)
    f = trace.fundamental[k:].sum(axis=0)
    v1 = math.hypot(f[0], f[1])
    i1 = math.hypot(f[2], f[3])
    if i1 == 0:
        raise SimulationError("no fundamental current at the AC port")
    return v1 / i1


def _step_series(trace: TraceRecord, start_cycle: int, tail: int = 5):
    m = np.asarray(trace.v_mean[start_cycle:])
    if len(m) < tail + 3:
        raise SteadyStateError("too few cycles after the step")
    final = float(np.mean(m[-tail:]))
    before = float(trace.v_mean[start_cycle - 1]) if start_cycle > 0 else float(m[0])
    return m, final, before


def output_settle_cycles(trace: TraceRecord, start_cycle: int, frac: float = 0.01) -> int:
    """Cycles after a step until the cycle mean stays within ``frac`` of the step size."""
    m, final, before = _step_series(trace, start_cycle)
    band = frac * abs(before - final)
    outside = np.nonzero(np.abs(m - final) > band)[0]
    return int(outside[-1] + 1) if len(outside) else 0


def fit_output_tau(trace: TraceRecord, start_cycle: int, floor: float = 0.05) -> float:
    """Time constant of the output's approach to its new level after a step.

    Log-linear fit to the cycle means (placed at mid-cycle) while their
    distance from the final level is above ``floor`` of the initial one.
    """
    m, final, _ = _step_series(trace, start_cycle)
    dev = np.abs(m - final)
    if dev[0] == 0:
        raise SteadyStateError("the step did not move the output")
    keep = dev > floor * dev[0]
    n = max(int(np.argmin(keep)) if not keep.all() else len(keep), 3)
    t = trace.cycle_t0[start_cycle:start_cycle + n] + trace.config.period / 2
    slope = np.polyfit(t - t[0], np.log(np.maximum(dev[:n], 1e-300)), 1)[0]
    if slope >= 0:
        raise SteadyStateError("output is not settling after the step")
    return float(-1.0 / slope)


def ideal_timing_config(cfg: RectifierConfig, delay: float) -> RectifierConfig:
    return replace(cfg, t_cmp_on=delay, t_cmp_off=delay)


def delay_loss_curve(cfg: RectifierConfig, residual_delays, n_cycles=None):
    """PCE with a fixed, symmetric residual ON/OFF delay and no compensation.

    The comparators sense the ideal switching condition (zero offsets, OFF
    edge on the conduction voltage), so ``delay`` is exactly the timing error
    of both edges.
    """
    out = []
    for d in residual_delays:
        if not 0 <= d < cfg.period / 4:
            raise ValueError("residual delays must lie in [0, period/4)")
        sim = Simulator(ideal_timing_config(cfg, d), None)
        sim.warm_up()
        if n_cycles:
            sim.run(n_cycles)
        else:
            sim.run(5)
        tr = sim.trace()
        out.append((float(d), measure_pce(tr)))
    return out
