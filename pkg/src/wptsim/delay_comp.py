"""Per-edge sample-and-accumulate delay compensation.

Each gate edge (ON and OFF of both rectifier branches) owns one
:class:`CompensatorState`. Once per carrier cycle the switch voltage at the
switching instant is sampled into an :class:`EdgeSample` and transferred onto
the compensation capacitor by :func:`accumulate`; the capacitor voltage is the
offset the rectifier adds at its comparator input.

Sign convention: ``v_c`` is the comparator threshold on the forward branch
voltage (input minus output). Lowering it advances the switching instant.
``v_s`` is negative when the switch acts late, so ``v_c + v_s`` corrects it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ._layout import (
    E_BRANCH, E_CONDUCTED, E_FORCED_OPEN, E_SLOPE_CLOSE, E_SLOPE_OPEN,
    E_SLOPE_TRIP_OFF, E_SLOPE_TRIP_ON, E_T_CLOSE, E_T_OPEN, E_VS_OFF, E_VS_ON,
)

ON = "on"
OFF = "off"
# order of the offsets handed to the kernel
EDGE_KEYS = ("p_on", "p_off", "n_on", "n_off")

TOL_VS = 1e-3
TOL_DELAY = 100e-12


@dataclass(frozen=True)
class CompensatorState:
    edge: str = ON
    v_c: float = 0.0
    c_s: float = 200e-15
    c_c: float = 200e-15
    i_src: float = 5e-6
    t_zcd: float = 200e-12
    mismatch: float = 0.0
    off_delay_line: float | None = None
    no_conduct_count: int = 0
    reset_threshold_cycles: int = 4
    rail: float = 2.0
    clamp_events: int = 0
    resets: int = 0

    def __post_init__(self):
        if self.edge not in (ON, OFF):
            raise ValueError(f"edge must be 'on' or 'off', got {self.edge!r}")
        if min(self.c_s, self.c_c, self.i_src, self.rail) <= 0:
            raise ValueError("capacitances, charge current and rail must be positive")
        if self.t_zcd < 0:
            raise ValueError("t_zcd must be non-negative")
        if self.reset_threshold_cycles < 1:
            raise ValueError("reset_threshold_cycles must be >= 1")
        if self.edge == ON and self.off_delay_line is not None:
            raise ValueError("off_delay_line only applies to the OFF edge")

    @property
    def overshoot(self) -> float:
        """Sampling-capacitor overshoot accumulated during the ZCD delay."""
        return self.i_src / self.c_s * self.t_zcd


@dataclass(frozen=True)
class EdgeSample:
    v_s: float
    slope: float
    cycle_index: int
    edge: str = ON
    branch: int = 0
    switch_slope: float = float("nan")

    @property
    def residual_delay(self) -> float:
        """First-order timing error of the switching instant, positive = late."""
        if not math.isfinite(self.switch_slope) or self.switch_slope == 0.0:
            return float("nan")
        if self.edge == ON:
            return -self.v_s / self.switch_slope
        return self.v_s / self.switch_slope


OFF_TRIGGER_SPAN_DEG = 66.0


def default_delay_line(f0: float, t_cmp_off: float = 0.0) -> float:
    """OFF-edge delay line sized so trigger-to-gate spans 66 degrees.

    The OFF comparator then trips on the rising flank, in the same region as
    the ON trigger, instead of near the flat top of the waveform. The line is
    matched to its comparator: delay line plus ``t_cmp_off`` is constant.
    """
    return max(OFF_TRIGGER_SPAN_DEG / 360.0 / f0 - t_cmp_off, 0.0)


def default_bank(f0: float, t_cmp_off: float = 0.0, **overrides) -> dict[str, CompensatorState]:
    """Four independent compensators, one per gate edge."""
    dl = overrides.pop("off_delay_line", None)
    if dl is None:
        dl = default_delay_line(f0, t_cmp_off)
    on = CompensatorState(edge=ON, **overrides)
    off = CompensatorState(edge=OFF, off_delay_line=dl, **overrides)
    return {"p_on": on, "p_off": off, "n_on": on, "n_off": off}


def sample_error(events, branch: int, edge: str, cycle_index: int) -> EdgeSample | None:
    """Switch voltage sampled at this cycle's switching instant of one edge.

    ``events`` is the per-cycle event vector written by the kernel. Returns
    ``None`` when the edge did not switch this cycle.
    """
    base = E_BRANCH * branch
    if edge == ON:
        t_sw = events[base + E_T_CLOSE]
        v_s = events[base + E_VS_ON]
        slope = events[base + E_SLOPE_TRIP_ON]
        sw_slope = events[base + E_SLOPE_CLOSE]
    else:
        t_sw = events[base + E_T_OPEN]
        v_s = events[base + E_VS_OFF]
        slope = events[base + E_SLOPE_TRIP_OFF]
        sw_slope = events[base + E_SLOPE_OPEN]
    if not math.isfinite(t_sw):
        return None
    return EdgeSample(float(v_s), float(slope), int(cycle_index), edge, branch,
                      float(sw_slope))


def accumulate(state: CompensatorState, sample: EdgeSample) -> CompensatorState:
    """Charge-transfer the sampled error onto the compensation capacitor.

    The polarity of ``v_s`` picks the ramp direction. Both capacitors ramp
    from matched sources at ``i_src/c`` until the sampling capacitor crosses
    zero; the zero-cross detector stops both after ``t_zcd``. The compensation
    capacitor therefore moves by

        (1 + mismatch) * (|v_s| * c_s / c_c + i_src * t_zcd / c_c) * sign(v_s)

    which is ``v_s`` itself for matched, ideal parts. The result is clamped to
    the supply rails and the clamp counted in ``clamp_events``.
    """
    v_s = sample.v_s
    if v_s == 0.0 or not math.isfinite(v_s):
        return state
    direction = 1.0 if v_s > 0 else -1.0
    ramp_time = abs(v_s) * state.c_s / state.i_src + state.t_zcd
    dv = direction * (1.0 + state.mismatch) * state.i_src * ramp_time / state.c_c
    v_new = state.v_c + dv
    clamps = state.clamp_events
    if v_new > state.rail:
        v_new, clamps = state.rail, clamps + 1
    elif v_new < -state.rail:
        v_new, clamps = -state.rail, clamps + 1
    return replace(state, v_c=v_new, clamp_events=clamps)


def safety_check(state: CompensatorState, conducted_this_cycle: bool) -> CompensatorState:
    """Reset the compensation capacitor after too many dead cycles."""
    if conducted_this_cycle:
        if state.no_conduct_count == 0:
            return state
        return replace(state, no_conduct_count=0)
    count = state.no_conduct_count + 1
    if count >= state.reset_threshold_cycles:
        return replace(state, v_c=0.0, no_conduct_count=0, resets=state.resets + 1)
    return replace(state, no_conduct_count=count)


def edge_healthy(events, branch: int, edge: str) -> bool:
    """Whether the edge behaved normally this cycle, as seen by its safety circuit.

    The ON edge needs the switch to have conducted; the OFF edge needs the
    switch to have been opened by its own trigger rather than by the
    end-of-half-cycle guard.
    """
    base = E_BRANCH * branch
    if edge == ON:
        return events[base + E_CONDUCTED] > 0.5
    return events[base + E_FORCED_OPEN] < 0.5


def step_bank(bank: dict[str, CompensatorState], events, cycle_index: int):
    """One cycle of sample, accumulate and safety check for every edge.

    Returns the new bank and the four samples (``None`` where an edge did
    not switch).
    """
    new = {}
    samples = []
    for key in EDGE_KEYS:
        branch = 0 if key[0] == "p" else 1
        edge = ON if key.endswith(ON) else OFF
        st = bank[key]
        smp = sample_error(events, branch, edge, cycle_index)
        if smp is not None:
            st = accumulate(st, smp)
        st = safety_check(st, edge_healthy(events, branch, edge))
        new[key] = st
        samples.append(smp)
    return new, samples


def in_tolerance(v_s: float, residual: float) -> bool:
    """|v_s| below 1 mV or residual delay below 100 ps, whichever holds first."""
    if not math.isfinite(v_s):
        return False
    return abs(v_s) < TOL_VS or (math.isfinite(residual) and abs(residual) < TOL_DELAY)


@dataclass(frozen=True)
class ConvergeResult:
    v_c: dict
    cycles_to_settle: int
    residual_delay: float
    converged: bool
    trajectory: np.ndarray  # rows: cycle, edge index, v_s, v_c, residual

    def to_csv(self, path) -> None:
        names = {i: k for i, k in enumerate(EDGE_KEYS)}
        with open(path, "w") as fh:
            fh.write("cycle,edge,v_s_V,v_c_V,residual_delay_s\n")
            for row in self.trajectory:
                fh.write(f"{int(row[0])},{names[int(row[1])]},{row[2]:.9g},"
                         f"{row[3]:.9g},{row[4]:.9g}\n")


class ConvergenceError(RuntimeError):
    def __init__(self, message, trajectory):
        super().__init__(message)
        self.trajectory = trajectory


def converge(cfg, state0=None, *, warmup_cycles=None, max_cycles=64,
             settle_run=3, raise_on_failure=True) -> ConvergeResult:
    """Close the compensation loop from ``state0`` and count cycles to settle.

    The rectifier is first brought to periodic steady state with the
    compensators frozen at their initial values, then the loop is released.
    Settled means every edge in tolerance for ``settle_run`` consecutive
    cycles; ``cycles_to_settle`` is the index of the first of those cycles,
    counted from the release (0 = the first closed-loop cycle already fine).
    """
    from . import rectifier_sim

    bank = dict(state0) if state0 is not None else default_bank(cfg.f0, cfg.t_cmp_off)
    sim = rectifier_sim.Simulator(cfg, bank)
    sim.warm_up(max_cycles=warmup_cycles)
    sim.adapt = True

    traj = []
    run = 0
    for k in range(max_cycles):
        rec = sim.step()
        ok = True
        for i in range(4):
            v_s = rec.v_s[i]
            res = rec.residual[i]
            v_c = sim.bank[EDGE_KEYS[i]].v_c
            traj.append((k, i, v_s, v_c, res))
            ok = ok and in_tolerance(v_s, res)
        run = run + 1 if ok else 0
        if run >= settle_run:
            first = k - settle_run + 1
            last = [r for r in traj if r[0] == k]
            residual = max(abs(r[4]) for r in last)
            return ConvergeResult({key: sim.bank[key].v_c for key in EDGE_KEYS},
                                  first, residual, True, np.array(traj))
    traj = np.array(traj)
    if raise_on_failure:
        raise ConvergenceError(
            f"compensation did not settle within {max_cycles} cycles", traj)
    last = traj[traj[:, 0] == traj[-1, 0]]
    return ConvergeResult({key: sim.bank[key].v_c for key in EDGE_KEYS},
                          max_cycles, float(np.nanmax(np.abs(last[:, 4]))), False, traj)


def settled_trace(cfg, state0=None, *, n_cycles=10, settle_run=3, max_cycles=64,
                  record_stride=0):
    """Compensated steady state: converge, let the output settle, record ``n_cycles``.

    Returns ``(trace, first_recorded_cycle, cycles_to_settle)``.
    """
    from . import rectifier_sim

    bank = dict(state0) if state0 is not None else default_bank(cfg.f0, cfg.t_cmp_off)
    sim = rectifier_sim.Simulator(cfg, bank, record_stride=record_stride)
    sim.warm_up()
    sim.adapt = True
    run = 0
    for k in range(max_cycles):
        run = run + 1 if _all_ok(sim.step()) else 0
        if run >= settle_run:
            break
    else:
        raise ConvergenceError(f"compensation did not settle within {max_cycles} cycles",
                               np.empty((0, 5)))
    settled = k - settle_run + 1
    sim.warm_up()
    sim.adapt = True
    k0 = sim.n_cycles
    sim.run(n_cycles)
    return sim.trace(), k0, settled


def with_offsets(bank: dict, v_on: float, v_off: float) -> dict:
    """Copy of ``bank`` with every ON edge at ``v_on`` and every OFF edge at ``v_off``."""
    return {k: replace(st, v_c=float(v_on if st.edge == ON else v_off)) for k, st in bank.items()}


def offset_envelope(cfg, loads, delays) -> dict:
    """Range of converged offsets over a load/delay grid, widened to include 0.

    Its corners are the worst-case starting points used for settling checks:
    states the loop can legitimately be left in by another operating point,
    plus the reset value.
    """
    on = [0.0]
    off = [0.0]
    for d in delays:
        for rl in loads:
            c = replace(cfg, r_load=float(rl), t_cmp_on=float(d), t_cmp_off=float(d))
            res = converge(c)
            on += [res.v_c["p_on"], res.v_c["n_on"]]
            off += [res.v_c["p_off"], res.v_c["n_off"]]
    return {"on": (min(on), max(on)), "off": (min(off), max(off))}


@dataclass(frozen=True)
class StepResponse:
    step_cycle: int
    resettle_cycles: int | None        # None = not back in tolerance in the window
    output_settle_cycles: int
    tau: float
    in_tolerance: np.ndarray           # per post-step cycle, all four edges
    trace: object


def _all_ok(rec) -> bool:
    return all(in_tolerance(rec.v_s[i], rec.residual[i]) for i in range(4))


def step_response(cfg, changes: dict, state0=None, *, post_cycles=60, settle_run=3,
                  max_cycles=64, record_stride=0) -> StepResponse:
    """Converge, let the output settle, apply ``changes``, watch the loop recover.

    ``resettle_cycles`` counts post-step cycles (0 = the first one after the
    step) up to the first of ``settle_run`` consecutive in-tolerance cycles.
    """
    from . import rectifier_sim

    bank = dict(state0) if state0 is not None else default_bank(cfg.f0, cfg.t_cmp_off)
    sim = rectifier_sim.Simulator(cfg, bank, record_stride=record_stride)
    sim.warm_up()
    sim.adapt = True
    run = 0
    for _ in range(max_cycles):
        run = run + 1 if _all_ok(sim.step()) else 0
        if run >= settle_run:
            break
    else:
        raise ConvergenceError("compensation did not settle before the step", np.empty((0, 5)))
    sim.warm_up()   # adapting again after this; frozen only while the output settles
    sim.adapt = True
    sim.run(2)

    k0 = sim.n_cycles
    sim.set(**changes)
    ok = np.array([_all_ok(sim.step()) for _ in range(post_cycles)])
    resettle = None
    for i in range(len(ok) - settle_run + 1):
        if ok[i:i + settle_run].all():
            resettle = i
            break
    tr = sim.trace()
    settle = rectifier_sim.output_settle_cycles(tr, k0)
    try:
        tau = rectifier_sim.fit_output_tau(tr, k0)
    except rectifier_sim.SteadyStateError:
        tau = float("nan")
    return StepResponse(k0, resettle, settle, tau, ok, tr)
