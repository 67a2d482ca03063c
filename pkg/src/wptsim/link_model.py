"""Phasor solver for the two-coil resonant link.

TX side is a series-resonant mesh (driver, C_tx, coil with its ohmic loss and
the lumped tissue resistance R_rad). RX side is the coil feeding a parallel
tank, C_rx in parallel with the rectifier's AC-equivalent resistance r_rx.

PRE and PTE are both reported in the efficiency orientation: delivered power
over radiated (PRE) or input (PTE) power, larger is better.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, replace

import numpy as np

PRE = "PRE"
PRE_IMPLANT = "PRE_IMPLANT"   # radiated power counts what the implant absorbs too
PTE = "PTE"
POUT = "POUT"
RESISTIVE = "resistive"
CONSTANT_POWER = "constant_power"

F0 = 40.68e6


class SolverError(ArithmeticError):
    """Mesh equations gave a non-finite solution."""


class InfeasibleError(ValueError):
    """Requested operating point cannot be reached by the link."""


def resonant_cap(f0: float, L: float) -> float:
    """Capacitance that resonates with ``L`` at ``f0``."""
    if f0 <= 0 or L <= 0:
        raise ValueError("f0 and L must be positive")
    w = 2 * math.pi * f0
    return 1.0 / (w * w * L)


@dataclass(frozen=True)
class LinkParams:
    f0: float
    L_tx: float
    L_rx: float
    k: float
    R_ltx: float
    R_rad: float
    R_lrx: float
    C_tx: float
    C_rx: float
    R_src: float

    def __post_init__(self):
        for name in ("f0", "L_tx", "L_rx", "R_ltx", "R_rad", "R_lrx", "C_tx", "C_rx"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be positive and finite, got {val!r}")
        if not (math.isfinite(self.R_src) and self.R_src >= 0):
            raise ValueError(f"R_src must be non-negative, got {self.R_src!r}")
        if not 0 <= self.k < 1:
            raise ValueError(f"k must lie in [0, 1), got {self.k!r}")

    @property
    def omega(self) -> float:
        return 2 * math.pi * self.f0

    @property
    def M(self) -> float:
        return self.k * math.sqrt(self.L_tx * self.L_rx)

    def resonance_residual(self) -> tuple[float, float]:
        """|w0^2 L C - 1| for the TX and RX tanks."""
        w2 = self.omega ** 2
        return abs(w2 * self.L_tx * self.C_tx - 1.0), abs(w2 * self.L_rx * self.C_rx - 1.0)

    def scaled(self, **factors) -> "LinkParams":
        """Copy with fields multiplied, e.g. ``scaled(R_rad=100)``."""
        return replace(self, **{k: getattr(self, k) * v for k, v in factors.items()})


def default_params(f0=F0, L_tx=616e-9, L_rx=100e-9, k=0.05, q_tx=80.0, q_rx=15.0,
                   rad_fraction=0.5, R_src=1.0) -> LinkParams:
    """Reference implant link: coil losses from Q at f0, tanks tuned to f0."""
    if not (q_tx > 0 and q_rx > 0 and rad_fraction > 0):
        raise ValueError("q_tx, q_rx and rad_fraction must be positive")
    w = 2 * math.pi * f0
    r_ltx = w * L_tx / q_tx
    return LinkParams(
        f0=f0, L_tx=L_tx, L_rx=L_rx, k=k,
        R_ltx=r_ltx, R_rad=rad_fraction * r_ltx, R_lrx=w * L_rx / q_rx,
        C_tx=resonant_cap(f0, L_tx), C_rx=resonant_cap(f0, L_rx), R_src=R_src,
    )


@dataclass(frozen=True)
class PhasorSolution:
    i_tx: complex
    i_rx: complex
    v_rx: complex
    v_trans: complex
    p_in: float
    p_rad: float
    p_out: float
    phase_deg: float
    # kept for loss audits
    r_rx: float = float("nan")
    v_tx: float = float("nan")
    p_loss: float = float("nan")
    p_rx_loss: float = float("nan")


def _tx_impedance(link: LinkParams) -> complex:
    w = link.omega
    return (link.R_src + link.R_ltx + link.R_rad
            + 1j * w * link.L_tx + 1.0 / (1j * w * link.C_tx))


def _tank_impedance(link: LinkParams, r_rx: float) -> complex:
    return r_rx / (1.0 + 1j * link.omega * link.C_rx * r_rx)


def solve_phasor(link: LinkParams, r_rx: float, v_tx_amp: float) -> PhasorSolution:
    """Solve both meshes for a real drive of amplitude ``v_tx_amp``."""
    if not r_rx > 0:
        raise ValueError(f"r_rx must be positive, got {r_rx!r}")
    if not v_tx_amp > 0:
        raise ValueError(f"v_tx_amp must be positive, got {v_tx_amp!r}")
    w = link.omega
    zm = 1j * w * link.M
    z1 = _tx_impedance(link)
    zp = _tank_impedance(link, r_rx)
    z2 = link.R_lrx + 1j * w * link.L_rx + zp
    det = z1 * z2 - zm * zm
    if det == 0 or not cmath.isfinite(det):
        raise SolverError(f"singular mesh matrix at r_rx={r_rx!r}")
    i1 = v_tx_amp * z2 / det
    i2 = -v_tx_amp * zm / det
    vp = i2 * zp
    if not (cmath.isfinite(i1) and cmath.isfinite(i2) and cmath.isfinite(vp)):
        raise SolverError(f"non-finite mesh solution at r_rx={r_rx!r}")
    v_trans = i1 * (link.R_ltx + link.R_rad + 1j * w * link.L_tx)
    p_in = 0.5 * (v_tx_amp * i1.conjugate()).real
    p_rad = 0.5 * abs(i1) ** 2 * link.R_rad
    p_out = 0.5 * abs(vp) ** 2 / r_rx
    p_rx_loss = 0.5 * abs(i2) ** 2 * link.R_lrx
    p_loss = 0.5 * abs(i1) ** 2 * (link.R_src + link.R_ltx) + p_rx_loss
    phase = math.degrees(cmath.phase(i1))
    return PhasorSolution(i1, i2, vp, v_trans, p_in, p_rad, p_out, phase,
                          r_rx=r_rx, v_tx=v_tx_amp, p_loss=p_loss, p_rx_loss=p_rx_loss)


def pte(sol: PhasorSolution) -> float:
    if sol.p_in <= 0:
        raise ZeroDivisionError("PTE undefined: input power is zero")
    return sol.p_out / sol.p_in


def pre(sol: PhasorSolution, include_implant: bool = False) -> float:
    """Delivered over radiated power. Not bounded by 1.

    With ``include_implant`` the power taken up by the implant (its load and
    coil loss, both inside the body) is added to the radiated power.
    """
    p_rad = sol.p_rad
    if include_implant:
        p_rad += sol.p_out + sol.p_rx_loss
    if p_rad <= 0:
        raise ZeroDivisionError("PRE undefined: radiated power is zero")
    return sol.p_out / p_rad


def _metric_fn(metric):
    if metric == PRE:
        return pre
    if metric == PRE_IMPLANT:
        return lambda s: pre(s, include_implant=True)
    if metric == PTE:
        return pte
    if metric == POUT:
        return lambda s: s.p_out
    raise ValueError(f"metric must be PRE or PTE, got {metric!r}")


def metric_curve(link: LinkParams, metric: str, r_values) -> np.ndarray:
    """Metric evaluated at each r_rx (unit drive)."""
    fn = _metric_fn(metric)
    return np.array([fn(solve_phasor(link, float(r), 1.0)) for r in r_values])


@dataclass(frozen=True)
class OptimalLoad:
    r_rx: float
    value: float
    on_boundary: bool

    def __float__(self):
        return self.r_rx


def optimal_load(link: LinkParams, metric: str = PRE, bounds=(10.0, 10e3),
                 n_coarse: int = 64, abs_tol: float = 0.1, rel_tol: float = 1e-4) -> OptimalLoad:
    """Maximize ``metric`` over r_rx: log-spaced bracket, then golden section.

    When the refined maximum still sits at a bound the bound is returned with
    ``on_boundary`` set, since no interior maximum was found.
    """
    lo, hi = float(bounds[0]), float(bounds[1])
    if not (lo > 0 and hi > lo):
        raise ValueError(f"bounds must satisfy 0 < low < high, got {bounds!r}")
    fn = _metric_fn(metric)
    f = lambda r: fn(solve_phasor(link, r, 1.0))

    grid = np.geomspace(lo, hi, n_coarse)
    vals = [f(float(r)) for r in grid]
    i = int(np.argmax(vals))

    # golden section in log(r) over the neighbouring cells; at an edge the
    # maximum may still lie inside the single cell next to the bound
    a, b = math.log(grid[max(i - 1, 0)]), math.log(grid[min(i + 1, n_coarse - 1)])
    g = (math.sqrt(5) - 1) / 2
    c = b - g * (b - a)
    d = a + g * (b - a)
    fc, fd = f(math.exp(c)), f(math.exp(d))
    while True:
        ra, rb = math.exp(a), math.exp(b)
        if rb - ra < abs_tol or (rb - ra) < rel_tol * ra:
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(math.exp(c))
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(math.exp(d))
    r = math.exp(0.5 * (a + b))
    fr = f(r)
    if i in (0, n_coarse - 1):
        edge = float(grid[i])
        if vals[i] >= fr or abs(r - edge) <= max(abs_tol, rel_tol * edge):
            return OptimalLoad(edge, float(vals[i]), True)
    return OptimalLoad(r, fr, False)


def radiated_power_reduction(link: LinkParams, p_out_target: float = 1e-3, bounds=(10.0, 10e3),
                             r_pre: float | None = None, r_pte: float | None = None,
                             include_implant: bool = False) -> float:
    """Fractional drop in radiated power from choosing the PRE optimum over the PTE one.

    Both points are driven so that ``p_out_target`` is delivered. The circuit
    is linear, so the result does not depend on the target.
    """
    if not p_out_target > 0:
        raise ValueError("p_out_target must be positive")
    if r_pre is None:
        r_pre = optimal_load(link, PRE_IMPLANT if include_implant else PRE, bounds).r_rx
    if r_pte is None:
        r_pte = optimal_load(link, PTE, bounds).r_rx
    if r_pre == r_pte:
        return 0.0
    p_rad = []
    for r in (r_pre, r_pte):
        unit = solve_phasor(link, r, 1.0)
        if unit.p_out <= 0:
            raise InfeasibleError(f"no power delivered at r_rx={r:g}")
        sol = solve_phasor(link, r, math.sqrt(p_out_target / unit.p_out))
        p_rad.append(sol.p_out / pre(sol, include_implant))
    return 1.0 - p_rad[0] / p_rad[1]


def phase_vtx_itx(link: LinkParams, r_rx: float) -> float:
    """Phase of I_tx relative to V_tx in degrees, positive when current leads."""
    return solve_phasor(link, r_rx, 1.0).phase_deg


@dataclass(frozen=True)
class LoadModel:
    kind: str = RESISTIVE
    value: float = 700.0          # R_L in ohm or P0 in W
    scpc_ratio: float = 1.0
    ac_mapping_factor: float = 0.5

    def __post_init__(self):
        if self.kind not in (RESISTIVE, CONSTANT_POWER):
            raise ValueError(f"unknown load kind {self.kind!r}")
        if not self.value > 0:
            raise ValueError("load value (R_L or P0) must be positive")
        if not self.scpc_ratio > 0:
            raise ValueError("scpc_ratio must be positive")
        if not 0 < self.ac_mapping_factor <= 1:
            raise ValueError("ac_mapping_factor must lie in (0, 1]")

    @classmethod
    def resistive(cls, r_load, ratio=1.0, alpha=0.5):
        return cls(RESISTIVE, r_load, ratio, alpha)

    @classmethod
    def constant_power(cls, p0, ratio=1.0, alpha=0.5):
        return cls(CONSTANT_POWER, p0, ratio, alpha)


def rectifier_input_resistance(load: LoadModel, v_rx_amp: float | None = None) -> float:
    """AC resistance the rectifier and converter present to the RX tank.

    Resistive load behind a converter of ratio r looks like R_L/r^2 at the
    rectifier output; the full-wave rectifier maps that to alpha times it on
    the AC side (alpha = 1/2 when the output sits at the tank peak).

    A constant-power load P0 seen at the converter output has the
    instantaneous resistance (r*v)^2/P0 with v the tank amplitude, so the
    ratio cancels and r_rx = alpha*v^2/P0. With alpha = 1/2 the tank then
    delivers exactly v^2/(2 r_rx) = P0.
    """
    a = load.ac_mapping_factor
    if load.kind == RESISTIVE:
        return a * load.value / load.scpc_ratio ** 2
    if v_rx_amp is None or not v_rx_amp > 0:
        raise ValueError("constant-power mapping needs a positive v_rx_amp")
    return a * v_rx_amp ** 2 / load.value


def _fixed_point_residual(link, load, v_tx_amp, r):
    sol = solve_phasor(link, r, v_tx_amp)
    return rectifier_input_resistance(load, abs(sol.v_rx)) - r


def solve_operating_point(link: LinkParams, load: LoadModel, v_tx_amp: float,
                          bounds=(1e-2, 1e6), rtol: float = 1e-6) -> PhasorSolution:
    """Phasor solution where r_rx is consistent with the load at the solved tank voltage.

    Constant-power loads have two consistent points either side of the
    maximum-power resistance; the high-resistance one is returned. It is the
    stable one for a regulated load and the one whose r_rx rises with drive.
    """
    if load.kind == RESISTIVE:
        return solve_phasor(link, rectifier_input_resistance(load), v_tx_amp)

    peak = optimal_load(link, POUT, bounds)
    lo = peak.r_rx
    if _fixed_point_residual(link, load, v_tx_amp, lo) < 0:
        p_max = solve_phasor(link, lo, v_tx_amp).p_out
        raise InfeasibleError(
            f"drive {v_tx_amp:g} V delivers at most {p_max:.4g} W, load needs "
            f"{load.value * 0.5 / load.ac_mapping_factor:.4g} W")
    hi = lo * 2
    while _fixed_point_residual(link, load, v_tx_amp, hi) > 0:
        hi *= 2
        if hi > bounds[1] * 1e3:
            raise InfeasibleError("no consistent load resistance in bracket")
    while (hi - lo) > rtol * lo:
        mid = 0.5 * (lo + hi)
        if _fixed_point_residual(link, load, v_tx_amp, mid) > 0:
            lo = mid
        else:
            hi = mid
    return solve_phasor(link, 0.5 * (lo + hi), v_tx_amp)
