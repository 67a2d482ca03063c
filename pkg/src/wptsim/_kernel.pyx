# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled build of the rectifier cycle kernel.

Mirrors ``_kernel_py.py``; array offsets follow ``_layout.py``.
"""

from libc.math cimport sin, cos, isfinite, NAN

# offsets, see _layout.py
cdef enum:
    P_AMP = 0
    P_OMEGA = 1
    P_RSRC = 2
    P_RON = 3
    P_VDIODE = 4
    P_TON = 5
    P_TOFF = 6
    P_CF = 7
    P_RLOAD = 8
    P_IAUX = 9
    P_DLINE = 10
    P_H = 11
    P_RSUB = 13
    S_T = 0
    S_V = 1
    S_SW = 2
    S_ARM_ON = 4
    S_ARM_OFF = 5
    S_PEND_CLOSE = 8
    S_PEND_OPEN = 9
    E_BRANCH = 16
    E_T_TRIP_ON = 0
    E_SLOPE_TRIP_ON = 1
    E_T_CLOSE = 2
    E_VS_ON = 3
    E_SLOPE_CLOSE = 4
    E_T_TRIP_OFF = 5
    E_SLOPE_TRIP_OFF = 6
    E_T_OPEN = 7
    E_VS_OFF = 8
    E_SLOPE_OPEN = 9
    E_CONDUCTED = 10
    E_FORCED_OPEN = 11
    E_N_CLOSE = 12
    E_Q_RECT = 32
    E_CROSS = 43
    E_V_START = 44
    E_V_END = 45
    N_EVENTS = 48
    N_AUG = 12
    MAX_TRIPS = 4




cdef void _deriv(double t, double v, bint sw0, bint sw1, double[::1] P,
                 double* k) noexcept nogil:
    cdef double amp = P[P_AMP], w = P[P_OMEGA], rs = P[P_RSRC]
    cdef double c = cos(w * t), s = sin(w * t)
    cdef double vac = amp * s
    cdef double rsub = P[P_RSUB]
    cdef double iac, irect, ron, vd, u, i0, i1, vport, ires, iaux
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
    k[0] = (irect - ires - iaux) / P[P_CF]
    k[1] = irect
    k[2] = ires
    k[3] = iaux
    k[4] = vac * iac
    k[5] = v * ires
    k[6] = vport * iac
    k[7] = v
    k[8] = vport * c
    k[9] = vport * s
    k[10] = iac * c
    k[11] = iac * s


cdef double _rk4(double t, double v, double dt, bint sw0, bint sw1,
                 double[::1] P, double* acc) noexcept nogil:
    cdef double k1[N_AUG]
    cdef double k2[N_AUG]
    cdef double k3[N_AUG]
    cdef double k4[N_AUG]
    cdef double h6
    cdef int i
    if dt <= 0.0:
        return v
    _deriv(t, v, sw0, sw1, P, k1)
    _deriv(t + 0.5 * dt, v + 0.5 * dt * k1[0], sw0, sw1, P, k2)
    _deriv(t + 0.5 * dt, v + 0.5 * dt * k2[0], sw0, sw1, P, k3)
    _deriv(t + dt, v + dt * k3[0], sw0, sw1, P, k4)
    h6 = dt / 6.0
    for i in range(1, N_AUG):
        acc[i - 1] += h6 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    return v + h6 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])


cdef inline double _sense(int b, double t, double v, double[::1] P) noexcept nogil:
    cdef double vac = P[P_AMP] * sin(P[P_OMEGA] * t)
    if b == 0:
        return vac - v
    return -vac - v


cdef double _sense_slope(int b, double t, double v, double[::1] S,
                         double[::1] P) noexcept nogil:
    cdef double k[N_AUG]
    cdef double d = P[P_AMP] * P[P_OMEGA] * cos(P[P_OMEGA] * t)
    if b == 1:
        d = -d
    _deriv(t, v, S[S_SW] > 0.5, S[S_SW + 1] > 0.5, P, k)
    return d - k[0]


cdef inline double _switch_voltage(double u, double vd) noexcept nogil:
    return u if u < vd else vd


cdef inline double _off_sense(int b, double t, double v, double[::1] P) noexcept nogil:
    if P[P_DLINE] > 0.0:
        return _sense(b, t, v, P)
    return _sense(b, t, v, P) * P[P_RON] / (P[P_RSRC] + P[P_RON])


cdef void _trip(int b, double t, double v, double[::1] S, double[::1] P,
                double[::1] E, int edge, double t_x) noexcept nogil:
    cdef int base = E_BRANCH * b
    cdef double kk
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
            kk = P[P_RON] / (P[P_RSRC] + P[P_RON])
            E[base + E_SLOPE_TRIP_OFF] = kk * _sense_slope(b, t_x, v, S, P)
        E[base + E_T_TRIP_OFF] = t_x


cdef void _half_boundary(double t, double[::1] S, double[::1] P, double[::1] O,
                         double[::1] E, int ending, int starting) noexcept nogil:
    cdef double v = S[S_V]
    cdef int b
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


cdef void _apply_pending(double t, double[::1] S, double[::1] P, double[::1] O,
                         double[::1] E) noexcept nogil:
    cdef double v = S[S_V]
    cdef double vd = P[P_VDIODE]
    cdef double tc, to, u
    cdef int b, base
    for b in range(2):
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


cdef int _detect(double t, double v, double t1, double v1, double[::1] S,
                 double[::1] P, double[::1] O, double* tsw, double* tx,
                 int* br, int* edge) noexcept nogil:
    cdef int n = 0, b
    cdef double thr, s0, s1, extra
    cdef bint hit
    for b in range(2):
        if S[S_ARM_ON + 2 * b] > 0.5:
            thr = O[2 * b]
            s0 = _sense(b, t, v, P)
            s1 = _sense(b, t1, v1, P)
            if s0 < thr and thr <= s1:
                tx[n] = t + (t1 - t) * (thr - s0) / (s1 - s0)
                tsw[n] = tx[n] + P[P_TON]
                br[n] = b
                edge[n] = 0
                n += 1
        if S[S_ARM_OFF + 2 * b] > 0.5:
            s0 = _off_sense(b, t, v, P)
            s1 = _off_sense(b, t1, v1, P)
            if P[P_DLINE] > 0.0:
                thr = O[2 * b + 1]
                hit = s0 < thr and thr <= s1
                extra = P[P_DLINE] + P[P_TOFF]
            else:
                thr = -O[2 * b + 1]
                hit = s0 > thr and thr >= s1
                extra = P[P_TOFF]
            if hit:
                tx[n] = t + (t1 - t) * (thr - s0) / (s1 - s0)
                tsw[n] = tx[n] + extra
                br[n] = b
                edge[n] = 1
                n += 1
    return n


def run_cycle(double[::1] S, double[::1] P, double[::1] O, double[::1] E,
              int n_steps, double[:, ::1] rec, int stride):
    """Integrate one carrier period starting at ``S[S_T]``; see _kernel_py."""
    cdef int i, j, k, b, n_trips, nrec = 0, half = n_steps // 2
    cdef int max_rec = rec.shape[0]
    cdef double h = P[P_H], t0 = S[S_T]
    cdef double t, v, v1, t_end, t_target, tp, cut
    cdef bint sw0, sw1
    cdef double acc[N_AUG - 1]
    cdef double trial[N_AUG - 1]
    cdef double tsw[MAX_TRIPS]
    cdef double tx[MAX_TRIPS]
    cdef int br[MAX_TRIPS]
    cdef int edge[MAX_TRIPS]
    cdef int pend[4]
    pend[0] = S_PEND_CLOSE
    pend[1] = S_PEND_OPEN
    pend[2] = S_PEND_CLOSE + 2
    pend[3] = S_PEND_OPEN + 2

    with nogil:
        for i in range(N_EVENTS):
            E[i] = 0.0
        for b in range(2):
            for k in range(E_T_TRIP_ON, E_SLOPE_OPEN + 1):
                E[E_BRANCH * b + k] = NAN
        E[E_V_START] = S[S_V]
        for i in range(N_AUG - 1):
            acc[i] = 0.0

        _half_boundary(t0, S, P, O, E, 1, 0)
        for j in range(1, n_steps + 1):
            t_target = t0 + j * h
            while True:
                t = S[S_T]
                v = S[S_V]
                if t >= t_target:
                    break
                t_end = t_target
                for k in range(4):
                    tp = S[pend[k]]
                    if tp >= 0.0 and t < tp and tp < t_end:
                        t_end = tp
                sw0 = S[S_SW] > 0.5
                sw1 = S[S_SW + 1] > 0.5
                for i in range(N_AUG - 1):
                    trial[i] = 0.0
                v1 = _rk4(t, v, t_end - t, sw0, sw1, P, trial)
                n_trips = _detect(t, v, t_end, v1, S, P, O, tsw, tx, br, edge)
                cut = t_end
                for k in range(n_trips):
                    if tsw[k] < cut:
                        cut = tsw[k]
                if cut < t_end:
                    for i in range(N_AUG - 1):
                        trial[i] = 0.0
                    v1 = _rk4(t, v, cut - t, sw0, sw1, P, trial)
                    t_end = cut
                for i in range(N_AUG - 1):
                    acc[i] += trial[i]
                S[S_T] = t_end
                S[S_V] = v1
                for k in range(n_trips):
                    if tx[k] <= t_end:
                        _trip(br[k], tx[k], v1, S, P, E, edge[k], tx[k])
                _apply_pending(t_end, S, P, O, E)
                if not isfinite(v1):
                    with gil:
                        raise FloatingPointError(
                            f"non-finite output voltage at t={t_end:.6e} s")
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
