"""Figure-reproduction scenarios.

Each scenario writes its CSVs into the output directory and returns a
summary dict: ``metrics`` (name -> value) and ``checks`` (name -> value,
limit, pass). Independent sweep points go through :func:`pmap`, which keeps
input order whether it runs serially or on a process pool, so outputs do not
depend on ``--jobs``.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import delay_comp as dc
from . import link_model as lm
from . import rectifier_sim as rs
from . import tx_controller as tc


def pmap(fn, items, jobs=1):
    items = list(items)
    if jobs is None or jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.10g}"
    return x


def _check(value, limit, ok):
    return {"value": value, "limit": limit, "pass": bool(ok)}


def _f(x):
    """Plain float for JSON (NaN becomes None)."""
    x = float(x)
    return None if not math.isfinite(x) else x


# ---------------------------------------------------------------- link

def pre_vs_pte(cfg, out: Path, jobs=1, seed=0):
    link = cfg.link
    L = cfg.values["link"]
    chk = cfg.values["check"]
    implant = L["p_rad_includes_implant"]
    pre_metric = lm.PRE_IMPLANT if implant else lm.PRE
    bounds = (L["r_rx_min"], L["r_rx_max"])
    n = max(L["r_rx_points"], 1)
    grid = np.geomspace(*bounds, n) if n > 1 else np.array([bounds[0]])
    rows = []
    for r in grid:
        sol = lm.solve_phasor(link, float(r), 1.0)
        rows.append((r, lm.pre(sol, implant), lm.pte(sol), sol.p_rad / sol.p_out, sol.phase_deg))
    _write_csv(out / "pre_vs_pte.csv", ["r_rx_ohm", "pre", "pte", "p_rad_per_p_out", "phase_deg"], rows)

    a = lm.optimal_load(link, pre_metric, bounds)
    b = lm.optimal_load(link, lm.PTE, bounds)
    gap = abs(a.r_rx - b.r_rx) / b.r_rx
    red = lm.radiated_power_reduction(link, bounds=bounds, r_pre=a.r_rx, r_pte=b.r_rx,
                                      include_implant=implant)
    low = replace(link, R_ltx=0.1 * link.R_ltx, R_src=0.0)
    red_low = lm.radiated_power_reduction(low, bounds=bounds, include_implant=implant)
    metrics = {
        "r_opt_pre_ohm": a.r_rx, "r_opt_pte_ohm": b.r_rx,
        "pre_at_pre_opt": a.value, "pte_at_pte_opt": b.value,
        "pre_opt_on_boundary": a.on_boundary, "pte_opt_on_boundary": b.on_boundary,
        "optimum_gap": gap, "radiated_power_reduction": red,
        "radiated_power_reduction_low_loss": red_low,
    }
    checks = {
        "optimum_gap": _check(gap, chk["optimum_gap_min"], gap > chk["optimum_gap_min"]),
        "radiated_power_reduction": _check(red, chk["reduction_min"], red > chk["reduction_min"]),
        "low_loss_reduction_larger": _check(red_low, red, red_low > red),
    }
    return {"metrics": metrics, "checks": checks}


def phase_sweep(cfg, out: Path, jobs=1, seed=0):
    link = cfg.link
    ld = cfg.load
    rows = []
    for rl in cfg.load_grid():
        r_rx = lm.rectifier_input_resistance(
            lm.LoadModel.resistive(rl, ld.scpc_ratio, ld.ac_mapping_factor))
        sol = lm.solve_phasor(link, r_rx, 1.0)
        rows.append((rl, r_rx, sol.phase_deg, lm.pre(sol), lm.pte(sol)))
    _write_csv(out / "phase_sweep.csv", ["r_load_ohm", "r_rx_ohm", "phase_deg", "pre", "pte"], rows)
    ph = np.array([r[2] for r in rows])
    d = np.diff(ph)
    mono = bool(len(d) == 0 or np.all(d > 0) or np.all(d < 0))
    metrics = {"phase_min_deg": float(ph.min()), "phase_max_deg": float(ph.max()),
               "monotonic": mono,
               "direction": "decreasing" if len(d) and d[0] < 0 else "increasing"}
    return {"metrics": metrics, "checks": {"phase_monotonic": _check(mono, True, mono)}}


# ---------------------------------------------------------------- rectifier

def _steady_point(args):
    rect, bank = args
    tr, k0, n = dc.settled_trace(rect, bank)
    return (rect.r_load, rs.measure_vcr(tr, k0), rs.measure_pce(tr, k0),
            rs.measure_equivalent_resistance(tr, k0), n)


def _steady_sweep(cfg, jobs):
    base = cfg.rectifier
    loads = sorted(set(cfg.load_grid()) | {base.r_load})
    bank = cfg.bank()
    return pmap(_steady_point, [(replace(base, r_load=rl), bank) for rl in loads], jobs)


def _sweep_metrics(rows, r_ref):
    arr = np.array([r[:4] for r in rows])
    vcr, pce = arr[:, 1], arr[:, 2]
    ip = int(np.argmax(pce))
    ref = int(np.argmin(np.abs(arr[:, 0] - r_ref)))
    return {
        "vcr_at_ref": float(vcr[ref]), "r_ref_ohm": float(arr[ref, 0]),
        "vcr_max": float(vcr.max()),
        "vcr_monotone_increasing": bool(np.all(np.diff(vcr) > 0)),
        "pce_peak": float(pce[ip]), "pce_peak_r_load_ohm": float(arr[ip, 0]),
        "pce_peak_interior": bool(0 < ip < len(pce) - 1),
    }


def vcr_sweep(cfg, out: Path, jobs=1, seed=0):
    rows = _steady_sweep(cfg, jobs)
    _write_csv(out / "vcr_sweep.csv",
               ["r_load_ohm", "vcr", "pce", "r_eq_ohm", "cycles_to_settle"], rows)
    m = _sweep_metrics(rows, cfg.rectifier.r_load)
    chk = cfg.values["check"]
    ok = abs(m["vcr_at_ref"] - chk["vcr_target"]) <= chk["vcr_tol"]
    return {"metrics": m, "checks": {
        "vcr_at_ref": _check(m["vcr_at_ref"], [chk["vcr_target"], chk["vcr_tol"]], ok),
        "vcr_monotone": _check(m["vcr_monotone_increasing"], True, m["vcr_monotone_increasing"]),
    }}


def pce_sweep(cfg, out: Path, jobs=1, seed=0):
    rows = _steady_sweep(cfg, jobs)
    _write_csv(out / "pce_sweep.csv",
               ["r_load_ohm", "vcr", "pce", "r_eq_ohm", "cycles_to_settle"], rows)
    m = _sweep_metrics(rows, cfg.rectifier.r_load)
    chk = cfg.values["check"]
    ok = abs(m["pce_peak"] - chk["pce_target"]) <= chk["pce_tol"]
    return {"metrics": m, "checks": {
        "pce_peak": _check(m["pce_peak"], [chk["pce_target"], chk["pce_tol"]], ok),
        "pce_peak_interior": _check(m["pce_peak_interior"], True, m["pce_peak_interior"]),
    }}


def _delay_point(args):
    rect, d = args
    return rs.delay_loss_curve(rect, [d])[0]


def delay_curve(cfg, out: Path, jobs=1, seed=0):
    delays = sorted(set(cfg.values["sweep"]["delays"]) | {0.0, 200e-12, 2e-9})
    pts = pmap(_delay_point, [(cfg.rectifier, d) for d in delays], jobs)
    p0 = pts[0][1]
    rows = [(d, p, p0 - p) for d, p in pts]
    _write_csv(out / "delay_curve.csv", ["delay_s", "pce", "drop"], rows)
    drop = {d: dr for d, _, dr in rows}
    d200, d2n = drop[200e-12], drop[2e-9]
    pce = np.array([p for _, p in pts])
    mono = bool(np.all(np.diff(pce) <= 1e-12))
    chk = cfg.values["check"]
    metrics = {"pce_at_0": p0, "drop_at_200ps": d200, "drop_at_2ns": d2n,
               "drop_ratio_2ns_200ps": d2n / d200 if d200 > 0 else None,
               "monotone_non_increasing": mono}
    checks = {
        "drop_at_200ps": _check(d200, chk["delay_drop_max"], d200 < chk["delay_drop_max"]),
        "drop_ratio": _check(metrics["drop_ratio_2ns_200ps"], 5.0,
                             d200 > 0 and d2n >= 5 * d200),
        "monotone": _check(mono, True, mono),
    }
    return {"metrics": metrics, "checks": checks}


# ---------------------------------------------------------------- compensation

def _settle_point(args):
    rect, bank, v_on, v_off, max_cycles = args
    res = dc.converge(rect, dc.with_offsets(bank, v_on, v_off), max_cycles=max_cycles,
                      raise_on_failure=False)
    return (rect.r_load, rect.t_cmp_on, v_on, v_off, res.cycles_to_settle,
            res.residual_delay, res.converged)


def _banks_for_delay(cfg, d):
    bank = cfg.bank()
    if cfg.values["compensator"]["off_delay_line"] is None:
        dl = dc.default_delay_line(cfg.rectifier.f0, d)
        bank = {k: (replace(s, off_delay_line=dl) if s.edge == dc.OFF else s)
                for k, s in bank.items()}
    return bank


def settle(cfg, out: Path, jobs=1, seed=0):
    sw = cfg.values["sweep"]
    base = cfg.rectifier
    loads = cfg.load_grid()
    delays = sw["delays_settle"]
    on, off = sw["offsets_on"], sw["offsets_off"]
    if on is None or off is None:
        env = _envelope(cfg, loads, delays, jobs)
        on = on if on is not None else sorted({0.0, *env["on"]})
        off = off if off is not None else sorted({0.0, *env["off"]})
    mc = cfg.values["compensator"]["max_cycles"]
    work = []
    for d in delays:
        bank = _banks_for_delay(cfg, d)
        for rl in loads:
            rect = replace(base, r_load=rl, t_cmp_on=d, t_cmp_off=d)
            for a in on:
                for b in off:
                    work.append((rect, bank, a, b, mc))
    rows = pmap(_settle_point, work, jobs)
    _write_csv(out / "settle.csv", ["r_load_ohm", "delay_s", "v_c_on0_V", "v_c_off0_V",
                                    "cycles_to_settle", "residual_delay_s", "converged"], rows)
    nominal = dc.converge(base, cfg.bank(), max_cycles=mc, raise_on_failure=False)
    nominal.to_csv(out / "settle_trajectory.csv")

    worst = max(r[4] for r in rows)
    resid = max(abs(r[5]) for r in rows if r[6]) if any(r[6] for r in rows) else float("nan")
    chk = cfg.values["check"]
    metrics = {"worst_cycles_to_settle": worst, "worst_residual_delay_s": _f(resid),
               "points": len(rows), "all_converged": all(r[6] for r in rows),
               "offsets_on_V": list(on), "offsets_off_V": list(off),
               "nominal_cycles_to_settle": nominal.cycles_to_settle}
    checks = {
        "worst_cycles_to_settle": _check(worst, chk["settle_max_cycles"],
                                         worst <= chk["settle_max_cycles"]),
        "worst_residual_delay": _check(_f(resid), chk["residual_max"],
                                       math.isfinite(resid) and resid < chk["residual_max"]),
    }
    return {"metrics": metrics, "checks": checks}


def _envelope_point(args):
    rect, bank = args
    r = dc.converge(rect, bank)
    return [r.v_c[k] for k in dc.EDGE_KEYS]


def _envelope(cfg, loads, delays, jobs):
    work = []
    for d in delays:
        bank = _banks_for_delay(cfg, d)
        bank = dc.with_offsets(bank, 0.0, 0.0)
        for rl in loads:
            work.append((replace(cfg.rectifier, r_load=rl, t_cmp_on=d, t_cmp_off=d), bank))
    vc = np.array(pmap(_envelope_point, work, jobs))
    on = np.concatenate([vc[:, 0], vc[:, 2], [0.0]])
    off = np.concatenate([vc[:, 1], vc[:, 3], [0.0]])
    return {"on": (float(on.min()), float(on.max())), "off": (float(off.min()), float(off.max()))}


def _step_summary(resp, rect):
    return {"resettle_cycles": resp.resettle_cycles,
            "output_settle_cycles": resp.output_settle_cycles,
            "tau_s": _f(resp.tau), "rc_s": rect.c_filter * resp.trace.r_load[-1]}


def loadstep(cfg, out: Path, jobs=1, seed=0):
    sc = cfg.values["scenario"]
    rect = replace(cfg.rectifier, r_load=sc["step_from"])
    resp = dc.step_response(rect, {"r_load": sc["step_to"]}, cfg.bank(),
                            post_cycles=sc["post_cycles"], record_stride=20)
    resp.trace.to_csv(out / "loadstep_samples.csv", out / "loadstep_cycles.csv")
    m = _step_summary(resp, rect)
    chk = cfg.values["check"]
    tau = resp.tau
    tau_ok = math.isfinite(tau) and abs(tau - chk["tau_target"]) <= chk["tau_rel_tol"] * chk["tau_target"]
    comp_first = (resp.resettle_cycles is not None
                  and resp.resettle_cycles < resp.output_settle_cycles)
    return {"metrics": m, "checks": {
        "tau": _check(_f(tau), [chk["tau_target"], chk["tau_rel_tol"]], tau_ok),
        "compensator_before_output": _check(
            [resp.resettle_cycles, resp.output_settle_cycles], "resettle < output", comp_first),
        "resettle_cycles": _check(resp.resettle_cycles, chk["resettle_max_cycles"],
                                  resp.resettle_cycles is not None
                                  and resp.resettle_cycles <= chk["resettle_max_cycles"]),
    }}


def _ask_point(args):
    rect, bank, factor, post = args
    resp = dc.step_response(rect, {"v_ac_amp": rect.v_ac_amp * factor}, bank, post_cycles=post)
    return (factor, resp.resettle_cycles, resp.output_settle_cycles, resp.tau)


def ask_step(cfg, out: Path, jobs=1, seed=0):
    sc = cfg.values["scenario"]
    work = [(cfg.rectifier, cfg.bank(), f, sc["post_cycles"]) for f in sc["ask_factors"]]
    rows = pmap(_ask_point, work, jobs)
    _write_csv(out / "ask_step.csv",
               ["amplitude_factor", "resettle_cycles", "output_settle_cycles", "tau_s"],
               [(f, "" if r is None else r, o, t) for f, r, o, t in rows])
    lim = cfg.values["check"]["resettle_max_cycles"]
    worst = None if any(r[1] is None for r in rows) else max(r[1] for r in rows)
    return {"metrics": {"worst_resettle_cycles": worst,
                        "resettle_cycles": {str(r[0]): r[1] for r in rows}},
            "checks": {"resettle_cycles": _check(worst, lim, worst is not None and worst <= lim)}}


# ---------------------------------------------------------------- controller

def calibrate_regulate(cfg, out: Path, jobs=1, seed=0):
    link, load, ccfg = cfg.link, cfg.load, cfg.controller
    ct = cfg.values["controller"]
    cal = tc.calibrate(link, load, ccfg)
    cal.to_csv(out / "calibration.csv")
    state = tc.start_regulation(cal, ccfg)
    stepped = replace(load, value=load.value * ct["load_step"])
    reg = tc.run_regulation(link, stepped, state, ccfg, n_steps=ct["n_steps"],
                            noise=ct["phase_noise"], seed=seed)
    reg.to_csv(out / "regulation.csv")
    implant = cfg.values["link"]["p_rad_includes_implant"]
    bounds = (cfg.values["link"]["r_rx_min"], cfg.values["link"]["r_rx_max"])
    best = lm.optimal_load(link, lm.PRE_IMPLANT if implant else lm.PRE, bounds)
    final = tc.plant_solution(link, stepped, reg.state.v_tx)
    pre_ratio = lm.pre(final, implant) / best.value
    chk = cfg.values["check"]
    steps = reg.settled_step
    metrics = {"delta_phi_opt_deg": cal.delta_phi_opt, "v_tx_opt_V": cal.v_tx_opt,
               "phase_slope_deg_per_V": cal.slope, "calibration_on_boundary": cal.on_boundary,
               "skipped_sweep_points": cal.skipped, "steps_to_deadband": steps,
               "final_v_tx_V": reg.state.v_tx, "final_pre_over_optimum": pre_ratio,
               "mode": reg.state.mode}
    checks = {
        "steps_to_deadband": _check(steps, chk["regulate_max_steps"],
                                    steps is not None and steps <= chk["regulate_max_steps"]),
        "pre_within_tolerance": _check(pre_ratio, 1 - chk["pre_rel_tol"],
                                       pre_ratio >= 1 - chk["pre_rel_tol"]),
    }
    return {"metrics": metrics, "checks": checks}


SCENARIOS = {
    "pre-vs-pte": pre_vs_pte,
    "vcr-sweep": vcr_sweep,
    "pce-sweep": pce_sweep,
    "phase-sweep": phase_sweep,
    "loadstep": loadstep,
    "delay-curve": delay_curve,
    "settle": settle,
    "calibrate-regulate": calibrate_regulate,
    "ask-step": ask_step,
}
