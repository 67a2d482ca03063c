"""Pure-Python build of the rectifier cycle kernel.

Used when the compiled extension is unavailable or ``WPTSIM_PURE=1``.
The algorithm is mirrored line for line in ``_kernel.pyx``.
"""

import math

from ._layout import (
    E_BRANCH, E_CONDUCTED, E_CROSS, E_FORCED_OPEN, E_N_CLOSE, E_Q_RECT,
    E_SLOPE_CLOSE, E_SLOPE_OPEN, E_SLOPE_TRIP_OFF, E_SLOPE_TRIP_ON,
    E_T_CLOSE, E_T_OPEN, E_T_TRIP_OFF, E_T_TRIP_ON, E_V_END, E_V_START,
    E_VS_OFF, E_VS_ON, N_AUG, N_EVENTS, P_AMP, P_CF, P_DLINE, P_H, P_IAUX,
    P_OMEGA, P_RLOAD, P_RON, P_RSRC, P_RSUB, P_TOFF, P_TON, P_VDIODE,
    S_ARM_OFF, S_ARM_ON, S_PEND_CLOSE, S_PEND_OPEN, S_SW, S_T, S_V,
)

_NAN = float("nan")


def _deriv(t, v, sw0, sw1, P):
    amp = P[P_AMP]
    w = P[P_OMEGA]
    rs = P[P_RSRC]
    c = math.cos(w * t)
    s = math.sin(w * t)
    vac = amp * s
    rsub = P[P_RSUB]
    if rsub > 0.0:
        iac = vac / (rs + rsub)
        irect = 0.0
    else:
        ron = P[P_RON]
        vd = P[P_VDIODE]
        u = vac - v
        if sw0:
            i0 = u / (rs + ron)
        elif u > vd:
            i0 = (u - vd) / rs
        else:
            i0 = 0.0
        u = -vac - v
        if sw1:
            i1 = u / (rs + ron)
        elif u > vd:
            i1 = (u - vd) / rs
        else:
            i1 = 0.0
        iac = i0 - i1
        irect = i0 + i1
    vport = vac - rs * iac
    ires = v / P[P_RLOAD]
    iaux = P[P_IAUX] if v > 0.0 else 0.0
    dv = (irect - ires - iaux) / P[P_CF]
    return (dv, irect, ires, iaux, vac * iac, v * ires, vport * iac, v,
            vport * c, vport * s, iac * c, iac * s)


def _rk4(t, v, dt, sw0, sw1, P, acc):
    """Advance ``v`` by ``dt``; add the integral increments into ``acc``."""
    if dt <= 0.0:
        return v
    k1 = _deriv(t, v, sw0, sw1, P)
    k2 = _deriv(t + 0.5 * dt, v + 0.5 * dt * k1[0], sw0, sw1, P)
    k3 = _deriv(t + 0.5 * dt, v + 0.5 * dt * k2[0], sw0, sw1, P)
    k4 = _deriv(t + dt, v + dt * k3[0], sw0, sw1, P)
    h6 = dt / 6.0
    for i in range(1, N_AUG):
        acc[i - 1] += h6 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    return v + h6 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])


def _sense(b, t, v, P):
    """Open-circuit forward voltage of branch ``b`` (input minus output)."""
    vac = P[P_AMP] * math.sin(P[P_OMEGA] * t)
    return (vac if b == 0 else -vac) - v


def _sense_slope(b, t, v, S, P):
    d = P[P_AMP] * P[P_OMEGA] * math.cos(P[P_OMEGA] * t)
    if b == 1:
        d = -d
    dv = _deriv(t, v, S[S_SW] > 0.5, S[S_SW + 1] > 0.5, P)[0]
    return d - dv


def _switch_voltage(u, vd):
    return u if u < vd else vd


def _trip(b, t, v, S, P, E, edge, t_x):
    base = E_BRANCH * b
    if edge == 0:
        S[S_ARM_ON + 2 * b] = 0.0
        S[S_PEND_CLOSE + 2 * b] = t_x + P[P_TON]
        E[base + E_T_TRIP_ON] = t_x
        E[base + E_SLOPE_TRIP_ON] = _sense_slope(b, t_x, v, S, P)
    else:
        S[S_ARM_OFF + 2 * b] = 0.0
        if P[P_DLINE] > 0.0:
            S[S_PEND_OPEN + 2 * b] = t_x + P[P_DLINE] + P[P_TOFF]
            E[base + E_SLOPE_TRIP_OFF] = _sense_slope(b, t_x, v, S, P)
        else:
            S[S_PEND_OPEN + 2 * b] = t_x + P[P_TOFF]
            k = P[P_RON] / (P[P_RSRC] + P[P_RON])
            E[base + E_SLOPE_TRIP_OFF] = k * _sense_slope(b, t_x, v, S, P)
        E[base + E_T_TRIP_OFF] = t_x


def _off_sense(b, t, v, P):
    if P[P_DLINE] > 0.0:
        return _sense(b, t, v, P)
    return _sense(b, t, v, P) * P[P_RON] / (P[P_RSRC] + P[P_RON])


def _half_boundary(t, S, P, O, E, ending, starting):
    v = S[S_V]
    if S[S_SW + ending] > 0.5:
        S[S_SW + ending] = 0.0
        E[E_BRANCH * ending + E_FORCED_OPEN] += 1.0
    S[S_ARM_ON + 2 * ending] = 0.0
    S[S_ARM_OFF + 2 * ending] = 0.0
    S[S_PEND_CLOSE + 2 * ending] = -1.0
    S[S_PEND_OPEN + 2 * ending] = -1.0

    b = starting
    S[S_ARM_ON + 2 * b] = 1.0
    if _sense(b, t, v, P) >= O[2 * b]:
        _trip(b, t, v, S, P, E, 0, t)
    if P[P_DLINE] > 0.0:
        S[S_ARM_OFF + 2 * b] = 1.0
        if _sense(b, t, v, P) >= O[2 * b + 1]:
            _trip(b, t, v, S, P, E, 1, t)


def _apply_pending(t, S, P, O, E):
    v = S[S_V]
    vd = P[P_VDIODE]
    for b in (0, 1):
        base = E_BRANCH * b
        tc = S[S_PEND_CLOSE + 2 * b]
        if tc >= 0.0 and tc <= t:
            S[S_PEND_CLOSE + 2 * b] = -1.0
            if S[S_SW + b] < 0.5:
                u = _sense(b, t, v, P)
                E[base + E_VS_ON] = -_switch_voltage(u, vd)
                E[base + E_SLOPE_CLOSE] = _sense_slope(b, t, v, S, P)
                E[base + E_T_CLOSE] = t
                S[S_SW + b] = 1.0
                E[base + E_CONDUCTED] = 1.0
                E[base + E_N_CLOSE] += 1.0
                if P[P_DLINE] <= 0.0:
                    S[S_ARM_OFF + 2 * b] = 1.0
                    if _off_sense(b, t, v, P) <= -O[2 * b + 1]:
                        _trip(b, t, v, S, P, E, 1, t)
        to = S[S_PEND_OPEN + 2 * b]
        if to >= 0.0 and to <= t:
            S[S_PEND_OPEN + 2 * b] = -1.0
            if S[S_SW + b] > 0.5:
                S[S_SW + b] = 0.0
                u = _sense(b, t, v, P)
                E[base + E_VS_OFF] = _switch_voltage(u, vd)
                E[base + E_SLOPE_OPEN] = _sense_slope(b, t, v, S, P)
                E[base + E_T_OPEN] = t
    if S[S_SW] > 0.5 and S[S_SW + 1] > 0.5:
        E[E_CROSS] += 1.0


def _detect(t, v, t1, v1, S, P, O):
    """Return trips inside [t, t1] as (t_switch, t_cross, branch, edge)."""
    trips = []
    for b in (0, 1):
        if S[S_ARM_ON + 2 * b] > 0.5:
            thr = O[2 * b]
            s0 = _sense(b, t, v, P)
            s1 = _sense(b, t1, v1, P)
            if s0 < thr <= s1:
                tx = t + (t1 - t) * (thr - s0) / (s1 - s0)
                trips.append((tx + P[P_TON], tx, b, 0))
        if S[S_ARM_OFF + 2 * b] > 0.5:
            s0 = _off_sense(b, t, v, P)
            s1 = _off_sense(b, t1, v1, P)
            if P[P_DLINE] > 0.0:
                thr = O[2 * b + 1]
                hit = s0 < thr <= s1
                extra = P[P_DLINE] + P[P_TOFF]
            else:
                thr = -O[2 * b + 1]
                hit = s0 > thr >= s1
                extra = P[P_TOFF]
            if hit:
                tx = t + (t1 - t) * (thr - s0) / (s1 - s0)
                trips.append((tx + extra, tx, b, 1))
    return trips


def run_cycle(S, P, O, E, n_steps, rec, stride):
    """Integrate one carrier period starting at ``S[S_T]``.

    ``S`` is updated in place, ``E`` receives the cycle's events and
    integrals, ``rec`` (n x 4, may have zero rows) receives every
    ``stride``-th grid sample. Returns the number of recorded rows.
    """
    for i in range(N_EVENTS):
        E[i] = 0.0
    for b in (0, 1):
        base = E_BRANCH * b
        for k in (E_T_TRIP_ON, E_SLOPE_TRIP_ON, E_T_CLOSE, E_VS_ON,
                  E_SLOPE_CLOSE, E_T_TRIP_OFF, E_SLOPE_TRIP_OFF, E_T_OPEN,
                  E_VS_OFF, E_SLOPE_OPEN):
            E[base + k] = _NAN
    E[E_V_START] = S[S_V]

    h = P[P_H]
    t0 = S[S_T]
    half = n_steps // 2
    acc = [0.0] * (N_AUG - 1)
    nrec = 0
    max_rec = rec.shape[0]

    _half_boundary(t0, S, P, O, E, 1, 0)
    for j in range(1, n_steps + 1):
        t_target = t0 + j * h
        while True:
            t = S[S_T]
            v = S[S_V]
            if t >= t_target:
                break
            t_end = t_target
            for k in (S_PEND_CLOSE, S_PEND_OPEN, S_PEND_CLOSE + 2,
                      S_PEND_OPEN + 2):
                tp = S[k]
                if tp >= 0.0 and t < tp < t_end:
                    t_end = tp
            sw0 = S[S_SW] > 0.5
            sw1 = S[S_SW + 1] > 0.5
            trial = [0.0] * (N_AUG - 1)
            v1 = _rk4(t, v, t_end - t, sw0, sw1, P, trial)
            trips = _detect(t, v, t_end, v1, S, P, O)
            cut = t_end
            for tr in trips:
                if tr[0] < cut:
                    cut = tr[0]
            if cut < t_end:
                trial = [0.0] * (N_AUG - 1)
                v1 = _rk4(t, v, cut - t, sw0, sw1, P, trial)
                t_end = cut
            for i in range(N_AUG - 1):
                acc[i] += trial[i]
            S[S_T] = t_end
            S[S_V] = v1
            for tr in trips:
                if tr[1] <= t_end:
                    _trip(tr[2], tr[1], v1, S, P, E, tr[3], tr[1])
            _apply_pending(t_end, S, P, O, E)
            if not math.isfinite(v1):
                raise FloatingPointError(f"non-finite output voltage at t={t_end:.6e} s")
        S[S_T] = t_target
        if j == half:
            _half_boundary(t_target, S, P, O, E, 0, 1)
        if stride > 0 and j % stride == 0 and nrec < max_rec:
            rec[nrec, 0] = t_target
            rec[nrec, 1] = S[S_V]
            rec[nrec, 2] = S[S_SW]
            rec[nrec, 3] = S[S_SW + 1]
            nrec += 1

    for i in range(N_AUG - 1):
        E[E_Q_RECT + i] = acc[i]
    E[E_V_END] = S[S_V]
    return nrec
