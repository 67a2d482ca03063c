"""Brute-force reference integrator for the behavioral rectifier.

Independent of the event-driven kernel: tiny fixed steps, comparators
checked after every step with no interpolation, pending switch actions
applied at the first step boundary at or past their due time.
Uncompensated mode only (zero offsets, OFF edge on the conduction voltage).
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _i_branch(u, on, r_src, r_on, v_d):
    if on:
        return u / (r_src + r_on)
    if u > v_d:
        return (u - v_d) / r_src
    return 0.0


@njit(cache=True)
def _dv(t, v, on0, on1, amp, w, r_src, r_on, v_d, c_f, r_load, i_aux):
    vac = amp * math.sin(w * t)
    i = _i_branch(vac - v, on0, r_src, r_on, v_d) + _i_branch(-vac - v, on1, r_src, r_on, v_d)
    ia = i_aux if v > 0.0 else 0.0
    return (i - v / r_load - ia) / c_f


@njit(cache=True)
def run(amp, f0, r_src, r_on, v_d, t_on, t_off, c_f, r_load, i_aux, v0,
        n_cycles, steps_per_cycle, record_every):
    w = 2.0 * math.pi * f0
    T = 1.0 / f0
    h = T / steps_per_cycle
    half = steps_per_cycle // 2
    n_rec = n_cycles * steps_per_cycle // record_every
    out = np.empty(n_rec)
    v = v0
    on = np.zeros(2, dtype=np.bool_)
    arm_on = np.zeros(2, dtype=np.bool_)
    arm_off = np.zeros(2, dtype=np.bool_)
    due_close = np.full(2, -1.0)
    due_open = np.full(2, -1.0)
    k = 0
    ratio = r_on / (r_src + r_on)
    for n in range(n_cycles * steps_per_cycle):
        t = n * h
        j = n % steps_per_cycle
        if j == 0 or j == half:
            b = 0 if j == 0 else 1
            e = 1 - b
            on[e] = False
            arm_on[e] = False
            arm_off[e] = False
            due_close[e] = -1.0
            due_open[e] = -1.0
            arm_on[b] = True
        # RK4 step with switches held
        k1 = _dv(t, v, on[0], on[1], amp, w, r_src, r_on, v_d, c_f, r_load, i_aux)
        k2 = _dv(t + h / 2, v + h / 2 * k1, on[0], on[1], amp, w, r_src, r_on, v_d, c_f, r_load, i_aux)
        k3 = _dv(t + h / 2, v + h / 2 * k2, on[0], on[1], amp, w, r_src, r_on, v_d, c_f, r_load, i_aux)
        k4 = _dv(t + h, v + h * k3, on[0], on[1], amp, w, r_src, r_on, v_d, c_f, r_load, i_aux)
        v = v + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t1 = t + h
        vac = amp * math.sin(w * t1)
        for b in range(2):
            u = (vac if b == 0 else -vac) - v
            if arm_on[b] and u >= 0.0:
                arm_on[b] = False
                due_close[b] = t1 + t_on
            if arm_off[b] and u * ratio <= 0.0:
                arm_off[b] = False
                due_open[b] = t1 + t_off
            if due_close[b] >= 0.0 and t1 >= due_close[b] - 1e-18:
                due_close[b] = -1.0
                if not on[b]:
                    on[b] = True
                    arm_off[b] = True
                    if u * ratio <= 0.0:
                        arm_off[b] = False
                        due_open[b] = t1 + t_off
            if due_open[b] >= 0.0 and t1 >= due_open[b] - 1e-18:
                due_open[b] = -1.0
                on[b] = False
        if (n + 1) % record_every == 0:
            out[k] = v
            k += 1
    return out


def reference_vout(cfg, v0, n_cycles=20, steps_per_cycle=100_000, samples_per_cycle=100):
    return run(cfg.v_ac_amp, cfg.f0, cfg.r_src_ac, cfg.r_on, cfg.v_diode, cfg.t_cmp_on,
               cfg.t_cmp_off, cfg.c_filter, cfg.r_load, cfg.i_aux, v0, n_cycles,
               steps_per_cycle, steps_per_cycle // samples_per_cycle)
