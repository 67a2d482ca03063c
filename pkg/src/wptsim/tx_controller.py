"""TX-side load sensing and power regulation.

Startup: with the implant drawing a known constant power, the drive voltage
is swept and the V_TX/I_TX phase at the point of smallest coil voltage is
stored as the target. Runtime: the drive is nudged to hold that phase. The
controller only ever sees TX waveforms.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import link_model as lm

log = logging.getLogger(__name__)

CALIBRATING = "CALIBRATING"
REGULATING = "REGULATING"
ALARM = "ALARM"


class CalibrationError(RuntimeError):
    pass


class PhaseMeasurementError(ValueError):
    pass


@dataclass(frozen=True)
class ControllerConfig:
    v_tx_range: tuple = (0.1, 1.0)
    sweep_points: int = 64
    phase_deadband: float = 0.01   # deg
    gain: float | None = None      # V/deg; None = 0.7 / |calibrated slope|
    max_step: float = 0.05         # V
    settle_cycles: int = 100       # carrier cycles per phase measurement
    samples_per_cycle: int = 256
    rail_alarm_steps: int = 3
    history_len: int = 256

    def __post_init__(self):
        lo, hi = self.v_tx_range
        if not (0 < lo < hi):
            raise ValueError(f"v_tx_range must be positive and ordered, got {self.v_tx_range!r}")
        if self.sweep_points < 1:
            raise ValueError("sweep_points must be >= 1")
        if self.gain is not None and self.gain == 0:
            raise ValueError("gain must be nonzero")
        if self.max_step <= 0 or self.settle_cycles < 4 or self.samples_per_cycle < 8:
            raise ValueError("max_step > 0, settle_cycles >= 4, samples_per_cycle >= 8 required")
        if self.phase_deadband <= self.phase_quantization:
            raise ValueError(
                f"phase_deadband {self.phase_deadband} deg is not above the measurement "
                f"quantization {self.phase_quantization:.3g} deg")

    @property
    def phase_quantization(self) -> float:
        return interpolation_floor(self.samples_per_cycle)

    def sweep(self) -> np.ndarray:
        return np.linspace(self.v_tx_range[0], self.v_tx_range[1], self.sweep_points)


def interpolation_floor(samples_per_cycle: int) -> float:
    """Worst-case zero-crossing error of linear interpolation on a sinusoid, deg.

    Between samples h apart the chord misses the zero of sin(wt) by at most
    about (wh)^3/48 rad of phase, far below the raw timestamp step 360/N.
    """
    wh = 2 * math.pi / samples_per_cycle
    return math.degrees(wh ** 3 / 48)


@dataclass(frozen=True)
class CalibrationResult:
    delta_phi_opt: float
    v_tx_opt: float
    slope: float                  # d(phase)/d(v_tx) at the optimum, deg/V
    on_boundary: bool
    degenerate: bool
    rows: tuple                   # (v_tx, |v_trans|, phase, pre, pte)
    skipped: int

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("v_tx_V,v_trans_V,phase_deg,pre,pte\n")
            for r in self.rows:
                fh.write(",".join(f"{x:.9g}" for x in r) + "\n")


def calibrate(link: lm.LinkParams, load: lm.LoadModel, cfg: ControllerConfig) -> CalibrationResult:
    """Sweep V_TX, pick the phase at minimum |v_trans|, check it is the PRE peak."""
    if load.kind != lm.CONSTANT_POWER:
        raise ValueError("calibration needs the implant on its constant-power load")
    rows = []
    skipped = 0
    for v in cfg.sweep():
        try:
            sol = lm.solve_operating_point(link, load, float(v))
        except lm.InfeasibleError:
            skipped += 1
            continue
        rows.append((float(v), abs(sol.v_trans), sol.phase_deg, lm.pre(sol), lm.pte(sol)))
    if skipped:
        log.warning("calibration: %d of %d sweep points cannot supply the load, skipped",
                    skipped, cfg.sweep_points)
    if not rows:
        raise CalibrationError("no sweep point can supply the calibration load")

    arr = np.array(rows)
    i = int(np.argmin(arr[:, 1]))
    if len(rows) == 1:
        return CalibrationResult(rows[0][2], rows[0][0], float("nan"), True, True,
                                 tuple(rows), skipped)
    j = int(np.argmax(arr[:, 3]))
    if abs(i - j) > 1:
        raise CalibrationError(
            f"minimum coil voltage at {arr[i, 0]:.4g} V but PRE peaks at {arr[j, 0]:.4g} V")
    boundary = i == 0 or i == len(rows) - 1
    if boundary:
        log.warning("calibration minimum sits on the sweep edge; widen v_tx_range")
    lo, hi = max(i - 1, 0), min(i + 1, len(rows) - 1)
    slope = (arr[hi, 2] - arr[lo, 2]) / (arr[hi, 0] - arr[lo, 0])
    return CalibrationResult(float(arr[i, 2]), float(arr[i, 0]), float(slope), boundary,
                             False, tuple(rows), skipped)


def _crossings(x, t):
    """Rising zero-crossing times by linear interpolation."""
    s = np.signbit(x)
    idx = np.nonzero(s[:-1] & ~s[1:])[0]
    x0, x1 = x[idx], x[idx + 1]
    return t[idx] + (t[idx + 1] - t[idx]) * (-x0) / (x1 - x0)


def measure_phase(v_tx, i_tx, f0: float, dt: float) -> tuple[float, float]:
    """Phase of ``i_tx`` relative to ``v_tx`` in degrees (positive = current leads).

    Each rising crossing of the current is paired with the nearest voltage
    crossing; the result is their mean offset. The uncertainty is the
    standard error over crossings combined with the interpolation floor.
    """
    v_tx = np.asarray(v_tx, dtype=float)
    i_tx = np.asarray(i_tx, dtype=float)
    if v_tx.shape != i_tx.shape:
        raise ValueError("waveforms must have equal length")
    n_cyc = len(v_tx) * dt * f0
    if n_cyc < 4:
        raise PhaseMeasurementError(f"need at least 4 carrier cycles, got {n_cyc:.2f}")
    t = np.arange(len(v_tx)) * dt
    tv = _crossings(v_tx, t)
    ti = _crossings(i_tx, t)
    if len(tv) < 2 or len(ti) < 2:
        raise PhaseMeasurementError("waveform has no zero crossings")
    period = 1.0 / f0
    k = np.searchsorted(tv, ti).clip(1, len(tv) - 1)
    near = np.where(np.abs(tv[k] - ti) < np.abs(tv[k - 1] - ti), tv[k], tv[k - 1])
    off = (near - ti) / period
    off = (off + 0.5) % 1.0 - 0.5
    deg = 360.0 * off
    se = float(np.std(deg) / math.sqrt(len(deg))) if len(deg) > 1 else 0.0
    floor = interpolation_floor(max(int(round(period / dt)), 1))
    return float(np.mean(deg)), math.hypot(se, floor)


def tx_waveforms(sol: lm.PhasorSolution, f0: float, n_cycles: int, samples_per_cycle: int,
                 t0: float = 0.0, noise: float = 0.0, rng=None):
    """Sampled drive voltage and coil current for a phasor operating point."""
    n = n_cycles * samples_per_cycle
    dt = 1.0 / (f0 * samples_per_cycle)
    # quarter-sample offset keeps samples off the exact zero crossings
    t = t0 + (np.arange(n) + 0.25) * dt
    w = 2 * math.pi * f0
    v = sol.v_tx * np.cos(w * t)
    i = abs(sol.i_tx) * np.cos(w * t + np.angle(sol.i_tx))
    if noise > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        v = v + noise * sol.v_tx * rng.standard_normal(n)
        i = i + noise * abs(sol.i_tx) * rng.standard_normal(n)
    return v, i, dt


@dataclass(frozen=True)
class ControllerState:
    mode: str = CALIBRATING
    delta_phi_opt: float = float("nan")
    v_tx: float = float("nan")
    slope_sign: float = 0.0
    gain: float = float("nan")
    rail_count: int = 0
    step: int = 0
    history: tuple = field(default=(), repr=False)   # (step, phase, v_tx), ring

    def __post_init__(self):
        if self.mode in (REGULATING, ALARM) and not math.isfinite(self.delta_phi_opt):
            raise ValueError("delta_phi_opt must be set before regulating")


def start_regulation(cal: CalibrationResult, cfg: ControllerConfig) -> ControllerState:
    if cal.degenerate or not math.isfinite(cal.slope) or cal.slope == 0:
        raise CalibrationError("calibration gives no usable phase slope")
    gain = cfg.gain if cfg.gain is not None else 0.7 / abs(cal.slope)
    return ControllerState(REGULATING, cal.delta_phi_opt, cal.v_tx_opt,
                           math.copysign(1.0, cal.slope), gain)


def regulate_step(state: ControllerState, measured_phase: float,
                  cfg: ControllerConfig) -> ControllerState:
    """One proportional correction of V_TX toward the calibrated phase."""
    if state.mode == CALIBRATING:
        raise RuntimeError("controller is not calibrated")
    err = measured_phase - state.delta_phi_opt
    v = state.v_tx
    if abs(err) > cfg.phase_deadband:
        # phase falls with drive when slope_sign < 0, so a high phase asks for more drive
        dv = -state.slope_sign * state.gain * err
        dv = max(-cfg.max_step, min(cfg.max_step, dv))
        v = min(max(v + dv, cfg.v_tx_range[0]), cfg.v_tx_range[1])
    railed = abs(err) > cfg.phase_deadband and v in cfg.v_tx_range
    rails = state.rail_count + 1 if railed else 0
    mode = ALARM if rails >= cfg.rail_alarm_steps else REGULATING
    if mode == ALARM and state.mode != ALARM:
        log.warning("V_TX railed at %.4g V for %d steps: load outside servo range", v, rails)
    hist = (state.history + ((state.step, measured_phase, v),))[-cfg.history_len:]
    return replace(state, mode=mode, v_tx=v, rail_count=rails, step=state.step + 1,
                   history=hist)


def plant_solution(link: lm.LinkParams, load: lm.LoadModel, v_tx: float,
                   bounds=(1e-2, 1e6)) -> lm.PhasorSolution:
    """Link operating point; an overloaded implant sits at its maximum-power point."""
    try:
        return lm.solve_operating_point(link, load, v_tx, bounds)
    except lm.InfeasibleError:
        r = lm.optimal_load(link, lm.POUT, bounds).r_rx
        return lm.solve_phasor(link, r, v_tx)


@dataclass(frozen=True)
class RegulationLog:
    rows: tuple                   # (step, phase, v_tx, p_rad, p_out, pre)
    state: ControllerState
    settled_step: int | None

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("step,phase_deg,v_tx_V,p_rad_W,p_out_W\n")
            for r in self.rows:
                fh.write(f"{r[0]},{r[1]:.9g},{r[2]:.9g},{r[3]:.9g},{r[4]:.9g}\n")


def run_regulation(link: lm.LinkParams, load: lm.LoadModel, state: ControllerState,
                   cfg: ControllerConfig, n_steps: int = 40, noise: float = 0.0,
                   seed: int = 0) -> RegulationLog:
    """Closed loop: plant phasor -> TX waveforms -> phase -> regulate_step."""
    rng = np.random.default_rng(seed)
    rows = []
    settled = None
    for n in range(n_steps):
        sol = plant_solution(link, load, state.v_tx)
        v, i, dt = tx_waveforms(sol, link.f0, cfg.settle_cycles, cfg.samples_per_cycle,
                                noise=noise, rng=rng)
        phase, _ = measure_phase(v, i, link.f0, dt)
        rows.append((n, phase, state.v_tx, sol.p_rad, sol.p_out, lm.pre(sol)))
        inside = abs(phase - state.delta_phi_opt) <= cfg.phase_deadband
        if inside and settled is None:
            settled = n
        elif not inside:
            settled = None
        state = regulate_step(state, phase, cfg)
    return RegulationLog(tuple(rows), state, settled)
