"""Compiled per-user root finders behind the KKT steps and the phi step.

All routines are scalar loops over users, so they are jitted with numba.
Root finders are Newton iterations kept inside a sign-change bracket; a
step leaving the bracket falls back to the (geometric) midpoint.
"""

import math

import numpy as np
from numba import njit

_REL = 4e-16
_MAX_IT = 200


@njit(cache=True)
def freq_user_root(rho, u_scale, kf, af, cyc, f_max):
    """User frequency from the f-stationarity at multiplier ``rho``.

    Solves 2 af f - u_scale/(kf + f) - rho cyc / f**2 = 0 (increasing in f),
    capped at f_max.  Returns (f, delta, df/drho).
    """
    psi_hi = 2.0 * af * f_max - u_scale / (kf + f_max) - rho * cyc / (f_max * f_max)
    if psi_hi <= 0.0:
        return f_max, -psi_hi, 0.0
    hi = f_max
    lo = 0.5 * f_max
    for _ in range(2000):
        if 2.0 * af * lo - u_scale / (kf + lo) - rho * cyc / (lo * lo) < 0.0:
            break
        hi = lo
        lo *= 0.5
    f = math.sqrt(lo * hi)
    dpsi = 1.0
    for _ in range(_MAX_IT):
        psi = 2.0 * af * f - u_scale / (kf + f) - rho * cyc / (f * f)
        dpsi = 2.0 * af + u_scale / ((kf + f) * (kf + f)) + 2.0 * rho * cyc / (f * f * f)
        if psi < 0.0:
            lo = f
        else:
            hi = f
        f_new = f - psi / dpsi
        if not (lo < f_new < hi):
            f_new = math.sqrt(lo * hi)
        if abs(f_new - f) <= _REL * f or hi - lo <= _REL * hi:
            f = f_new
            break
        f = f_new
    dpsi = 2.0 * af + u_scale / ((kf + f) * (kf + f)) + 2.0 * rho * cyc / (f * f * f)
    return f, 0.0, (cyc / (f * f)) / dpsi


@njit(cache=True)
def power_root(rho, yce, bits, x, r_icpt, r_slope, p_max, p_lo):
    """Transmit power from the p-stationarity under the affine secrecy rate.

    Minimises yce (bits^2 x p^2 + 1/(4 x r^2)) + rho bits / r with
    r = r_icpt + r_slope p on [p_lo, p_max].  Returns (p, beta, dp/drho).
    """
    r = r_icpt + r_slope * p_max
    g_hi = yce * (2.0 * bits * bits * x * p_max - r_slope / (2.0 * x * r ** 3)) \
        - rho * bits * r_slope / (r * r)
    if g_hi <= 0.0:
        return p_max, -g_hi, 0.0
    r = r_icpt + r_slope * p_lo
    g_lo = yce * (2.0 * bits * bits * x * p_lo - r_slope / (2.0 * x * r ** 3)) \
        - rho * bits * r_slope / (r * r)
    if g_lo >= 0.0:
        return p_lo, 0.0, 0.0
    lo, hi = p_lo, p_max
    p = math.sqrt(lo * hi)
    for _ in range(_MAX_IT):
        r = r_icpt + r_slope * p
        g = yce * (2.0 * bits * bits * x * p - r_slope / (2.0 * x * r ** 3)) \
            - rho * bits * r_slope / (r * r)
        dg = yce * (2.0 * bits * bits * x + 1.5 * r_slope * r_slope / (x * r ** 4)) \
            + 2.0 * rho * bits * r_slope * r_slope / r ** 3
        if g < 0.0:
            lo = p
        else:
            hi = p
        p_new = p - g / dg
        if not (lo < p_new < hi):
            p_new = math.sqrt(lo * hi)
        if abs(p_new - p) <= _REL * p or hi - lo <= _REL * hi:
            p = p_new
            break
        p = p_new
    r = r_icpt + r_slope * p
    dg = yce * (2.0 * bits * bits * x + 1.5 * r_slope * r_slope / (x * r ** 4)) \
        + 2.0 * rho * bits * r_slope * r_slope / r ** 3
    return p, 0.0, (bits * r_slope / (r * r)) / dg


@njit(cache=True)
def server_freq_root(rho, zeta, am, cyc):
    """Server frequency from 2 am cyc m + zeta - rho cyc / m**2 = 0.

    Returns (m, dm/drho, dm/dzeta); m = 0 when rho = 0.
    """
    if rho <= 0.0:
        return 0.0, 0.0, 0.0
    if zeta <= 0.0:
        if am <= 0.0:
            return np.inf, 0.0, 0.0
        m = (rho / (2.0 * am)) ** (1.0 / 3.0)
        dchi = 2.0 * am * cyc + 2.0 * rho * cyc / (m * m * m)
        return m, (cyc / (m * m)) / dchi, -1.0 / dchi
    hi = math.sqrt(rho * cyc / zeta)
    if am > 0.0:
        hi = min(hi, (rho / (2.0 * am)) ** (1.0 / 3.0))
    lo = 0.5 * hi
    for _ in range(2000):
        if 2.0 * am * cyc * lo - rho * cyc / (lo * lo) + zeta < 0.0:
            break
        hi = lo
        lo *= 0.5
    m = math.sqrt(lo * hi)
    for _ in range(_MAX_IT):
        chi = 2.0 * am * cyc * m - rho * cyc / (m * m) + zeta
        dchi = 2.0 * am * cyc + 2.0 * rho * cyc / (m * m * m)
        if chi < 0.0:
            lo = m
        else:
            hi = m
        m_new = m - chi / dchi
        if not (lo < m_new < hi):
            m_new = math.sqrt(lo * hi)
        if abs(m_new - m) <= _REL * m or hi - lo <= _REL * hi:
            m = m_new
            break
        m = m_new
    dchi = 2.0 * am * cyc + 2.0 * rho * cyc / (m * m * m)
    return m, (cyc / (m * m)) / dchi, -1.0 / dchi


@njit(cache=True)
def user_response(rho, zeta, n, prm, fix):
    """All per-user primal quantities as functions of (rho, zeta).

    ``prm`` rows: 0 u_scale, 1 kf, 2 af, 3 cyc_user, 4 f_max, 5 yce, 6 bits,
    7 x, 8 r_icpt, 9 r_slope, 10 p_max, 11 p_lo, 12 am, 13 cyc_server.
    ``fix`` rows: frozen (f, p, m) values, or nan for free variables.
    Returns (t, dt/drho, f, p, m, delta, beta).
    """
    f_fix, p_fix, m_fix = fix[0, n], fix[1, n], fix[2, n]
    if f_fix == f_fix:
        f, delta, df = f_fix, 0.0, 0.0
    else:
        f, delta, df = freq_user_root(rho, prm[0, n], prm[1, n], prm[2, n],
                                      prm[3, n], prm[4, n])
    if p_fix == p_fix:
        p, beta, dp = p_fix, 0.0, 0.0
    else:
        p, beta, dp = power_root(rho, prm[5, n], prm[6, n], prm[7, n], prm[8, n],
                                 prm[9, n], prm[10, n], prm[11, n])
    if m_fix == m_fix:
        m, dm = m_fix, 0.0
    else:
        m, dm, _ = server_freq_root(rho, zeta, prm[12, n], prm[13, n])
    r = prm[8, n] + prm[9, n] * p
    cyc_u, bits, cyc_s = prm[3, n], prm[6, n], prm[13, n]
    if m <= 0.0:
        return np.inf, -np.inf, f, p, m, delta, beta
    t = cyc_u / f + bits / r + cyc_s / m
    dt = -cyc_u / (f * f) * df - bits * prm[9, n] / (r * r) * dp - cyc_s / (m * m) * dm
    return t, dt, f, p, m, delta, beta


@njit(cache=True)
def min_time(n, prm, fix):
    """Completion time as rho -> infinity (every free resource at its limit)."""
    f = fix[0, n] if fix[0, n] == fix[0, n] else prm[4, n]
    p = fix[1, n] if fix[1, n] == fix[1, n] else prm[10, n]
    t = prm[3, n] / f + prm[6, n] / (prm[8, n] + prm[9, n] * p)
    if fix[2, n] == fix[2, n]:
        t += prm[13, n] / fix[2, n]
    return t


@njit(cache=True)
def rho_for_deadline(T, zeta, n, prm, fix, rho_guess):
    """Multiplier making user n finish exactly at T (0 if it already does)."""
    t0 = user_response(0.0, zeta, n, prm, fix)[0]
    if t0 <= T:
        return 0.0
    if T <= min_time(n, prm, fix):
        return np.inf
    rho = rho_guess if rho_guess > 0.0 and rho_guess < np.inf else 1.0
    lo, hi = 0.0, np.inf
    for _ in range(_MAX_IT + 800):
        t, dt = user_response(rho, zeta, n, prm, fix)[:2]
        if t > T:
            lo = rho
        else:
            hi = rho
        if t == T:
            break
        # Newton on log(rho), limited to a factor of e^3 per step
        if dt < 0.0:
            step = max(min(-(t - T) / (dt * rho), 3.0), -3.0)
        else:
            step = 3.0 if t > T else -3.0
        rho_new = rho * math.exp(step)
        if lo > 0.0 and hi < np.inf:
            if not (lo < rho_new < hi):
                rho_new = math.sqrt(lo * hi)
            if hi - lo <= _REL * hi:
                rho = rho_new
                break
        elif rho_new <= lo or rho_new >= hi:
            rho_new = lo * 20.0 if hi == np.inf else hi / 20.0
        if abs(rho_new - rho) <= _REL * rho:
            rho = rho_new
            break
        if rho_new > 1e300:
            return np.inf
        if rho_new < 1e-300:
            return 0.0
        rho = rho_new
    return rho


@njit(cache=True)
def respond_all(T, zeta, prm, fix, rho_guess, out):
    """Solve every user's deadline multiplier at (T, zeta).

    ``out`` rows receive rho, f, p, m, delta, beta, t.  Returns sum(rho).
    """
    total = 0.0
    for n in range(prm.shape[1]):
        rho = rho_for_deadline(T, zeta, n, prm, fix, rho_guess[n])
        out[0, n] = rho
        if 0.0 < rho < np.inf:
            rho_guess[n] = rho
        if rho == np.inf:
            total = np.inf
            continue
        t, _, f, p, m, delta, beta = user_response(rho, zeta, n, prm, fix)
        out[1, n] = f
        out[2, n] = p
        out[3, n] = m
        out[4, n] = delta
        out[5, n] = beta
        out[6, n] = t
        total += rho
    return total


@njit(cache=True)
def _phi_terms(phi, q):
    # q: 0 u_scale, 1 util_offset, 2 yce, 3 k_user, 4 f, 5 c1, 6 c2, 7 p,
    #    8 bits_per_phi, 9 r_s, 10 k_server, 11 c3, 12 c4, 13 m
    c1, c2, c3, c4 = q[5], q[6], q[11], q[12]
    f, m = q[4], q[13]
    dh = -q[0] / (q[1] + phi) + q[2] * (
        q[3] * c1 * c2 * phi ** (c2 - 1.0) * f * f + q[7] * q[8] / q[9]
        - q[10] * c3 * c4 * phi ** (-c4 - 1.0) * m * m)
    t = c1 * phi ** c2 / f + phi * q[8] / q[9] + c3 * phi ** (-c4) / m
    dt = c1 * c2 * phi ** (c2 - 1.0) / f + q[8] / q[9] - c3 * c4 * phi ** (-c4 - 1.0) / m
    return dh, t, dt


@njit(cache=True)
def _bisect_phi(lo, hi, q, which, T):
    # which 0: root of dh, 1: root of dt, 2: root of t - T (t increasing on [lo, hi]),
    # 3: root of t - T with t decreasing on [lo, hi]
    for _ in range(_MAX_IT):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        dh, t, dt = _phi_terms(mid, q)
        if which == 0:
            v = dh
        elif which == 1:
            v = dt
        elif which == 2:
            v = t - T
        else:
            v = T - t
        if v < 0.0:
            lo = mid
        else:
            hi = mid
    # deadline roots return the side that meets t <= T
    if which == 2:
        return lo
    if which == 3:
        return hi
    return 0.5 * (lo + hi)


@njit(cache=True)
def phi_step(q_all, lo_all, hi_all, T, out):
    """Per-user minimiser of the convex phi objective under t(phi) <= T.

    ``out`` rows receive phi, an infeasibility flag and the implied time
    multiplier (zero when the deadline is slack).
    """
    for n in range(q_all.shape[1]):
        q = q_all[:, n]
        lo, hi = lo_all[n], hi_all[n]
        # argmin of the convex completion time
        if _phi_terms(lo, q)[2] >= 0.0:
            phi_t = lo
        elif _phi_terms(hi, q)[2] <= 0.0:
            phi_t = hi
        else:
            phi_t = _bisect_phi(lo, hi, q, 1, T)
        if _phi_terms(phi_t, q)[1] > T:
            out[0, n] = phi_t
            out[1, n] = 1.0
            out[2, n] = 0.0
            continue
        a = lo if _phi_terms(lo, q)[1] <= T else _bisect_phi(lo, phi_t, q, 3, T)
        b = hi if _phi_terms(hi, q)[1] <= T else _bisect_phi(phi_t, hi, q, 2, T)
        if a > phi_t:
            a = phi_t
        if b < phi_t:
            b = phi_t
        dh_a, _, dt_a = _phi_terms(a, q)
        dh_b, _, dt_b = _phi_terms(b, q)
        eta = 0.0
        if dh_a >= 0.0:
            phi = a
            if a > lo and dt_a != 0.0:
                eta = max(-dh_a / dt_a, 0.0)
        elif dh_b <= 0.0:
            phi = b
            if b < hi and dt_b != 0.0:
                eta = max(-dh_b / dt_b, 0.0)
        else:
            phi = _bisect_phi(a, b, q, 0, T)
        out[0, n] = phi
        out[1, n] = 0.0
        out[2, n] = eta
