"""Compiled kernels for the projected nonlinear Gauss-Seidel solver."""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# stop codes
TOL, MAX_SWEEPS, STAGNATION, NAN = 0, 1, 2, 3


@njit(cache=True)
def _power_term(s, p):
    if p == 2.0:
        return s
    return s ** (0.5 * p)


@njit(cache=True)
def _coef(s, p):
    """s^{(p-2)/2}."""
    if p == 2.0:
        return 1.0
    return s ** (0.5 * (p - 2.0))


@njit(cache=True)
def _local_setup(j, u, adj_ptr, adj_simp, adj_loc, verts, grads, G0, gj, pk, gk, ak, p, gam, area):
    """Gradients G0 of the incident simplices and the hat gradient of node j on each."""
    deg = adj_ptr[j + 1] - adj_ptr[j]
    d = grads.shape[2]
    k = verts.shape[1]
    for m in range(deg):
        t = adj_simp[adj_ptr[j] + m]
        loc = adj_loc[adj_ptr[j] + m]
        for c in range(d):
            acc = 0.0
            for v in range(k):
                acc += u[verts[t, v]] * grads[t, v, c]
            G0[m, c] = acc
            gj[m, c] = grads[t, loc, c]
        pk[m] = p[t]
        gk[m] = gam[t]
        ak[m] = area[t]
    return deg


@njit(cache=True)
def _phi(delta, deg, G0, gj, pk, gk, ak, eps2, ell):
    out = 0.0
    d = G0.shape[1]
    for m in range(deg):
        s = eps2
        for c in range(d):
            g = G0[m, c] + delta * gj[m, c]
            s += g * g
        out += gk[m] / pk[m] * _power_term(s, pk[m]) * ak[m]
    return out - ell * delta


@njit(cache=True)
def _dphi(delta, deg, G0, gj, pk, gk, ak, eps2, ell):
    """First and second derivative of the 1-D restriction."""
    f1 = 0.0
    f2 = 0.0
    d = G0.shape[1]
    for m in range(deg):
        s = eps2
        dot = 0.0
        nj = 0.0
        for c in range(d):
            g = G0[m, c] + delta * gj[m, c]
            s += g * g
            dot += g * gj[m, c]
            nj += gj[m, c] * gj[m, c]
        if s <= 0.0:
            continue
        coef = gk[m] * _coef(s, pk[m]) * ak[m]
        f1 += coef * dot
        f2 += coef * (nj + (pk[m] - 2.0) * dot * dot / s)
    return f1 - ell, f2


@njit(cache=True)
def _line_min(lo_d, hi_d, deg, G0, gj, pk, gk, ak, eps2, ell, scale):
    """Exact minimiser of the convex restriction over [lo_d, hi_d] (lo_d <= 0 <= hi_d)."""
    f0, h0 = _dphi(0.0, deg, G0, gj, pk, gk, ak, eps2, ell)
    if f0 == 0.0 or lo_d == hi_d:
        return 0.0
    if h0 > 0.0 and math.isfinite(h0):
        step = abs(f0) / h0
    else:
        step = scale
    if step <= 0.0 or not math.isfinite(step):
        step = scale
    if f0 > 0.0:
        b = 0.0
        a = 0.0
        found = False
        for _ in range(200):
            a = max(lo_d, -2.0 * step)
            fa, _h = _dphi(a, deg, G0, gj, pk, gk, ak, eps2, ell)
            if fa < 0.0:
                found = True
                break
            if a == lo_d:
                return lo_d
            b = a
            step *= 4.0
        if not found:
            return a
    else:
        a = 0.0
        b = 0.0
        found = False
        for _ in range(200):
            b = min(hi_d, 2.0 * step)
            fb, _h = _dphi(b, deg, G0, gj, pk, gk, ak, eps2, ell)
            if fb > 0.0:
                found = True
                break
            if b == hi_d:
                return hi_d
            a = b
            step *= 4.0
        if not found:
            return b
    # safeguarded Newton on [a, b] with dphi(a) < 0 < dphi(b)
    x = 0.5 * (a + b)
    if h0 > 0.0 and math.isfinite(h0):
        xn = -f0 / h0
        if a < xn < b:
            x = xn
    for _ in range(200):
        fx, hx = _dphi(x, deg, G0, gj, pk, gk, ak, eps2, ell)
        if fx == 0.0:
            return x
        if fx > 0.0:
            b = x
        else:
            a = x
        xn = x - fx / hx if hx > 0.0 else 0.5 * (a + b)
        if not (a < xn < b) or not math.isfinite(xn):
            xn = 0.5 * (a + b)
        if abs(xn - x) <= 1e-15 * (abs(x) + scale) or b - a <= 1e-15 * (abs(a) + abs(b) + scale):
            return xn
        x = xn
    return x


@njit(cache=True)
def total_energy(u, elems, verts, grads, area, p, gam, eps2, load):
    """Kahan-summed discrete energy sum_T gamma/p (|Du|^2+eps^2)^{p/2}|T| - load.u."""
    d = grads.shape[2]
    k = verts.shape[1]
    acc = 0.0
    comp = 0.0
    for t in elems:
        s = eps2
        for c in range(d):
            g = 0.0
            for v in range(k):
                g += u[verts[t, v]] * grads[t, v, c]
            s += g * g
        term = gam[t] / p[t] * _power_term(s, p[t]) * area[t]
        y = term - comp
        tt = acc + y
        comp = (tt - acc) - y
        acc = tt
    for j in range(u.shape[0]):
        if load[j] != 0.0:
            y = -load[j] * u[j] - comp
            tt = acc + y
            comp = (tt - acc) - y
            acc = tt
    return acc


@njit(cache=True)
def node_forces(u, nodes, adj_ptr, adj_simp, adj_loc, verts, grads, area, p, gam, eps2, load):
    """dE/du_j = sum_T a(Du_T)·D lambda_j |T| - load_j for the listed nodes."""
    d = grads.shape[2]
    k = verts.shape[1]
    out = np.zeros(nodes.shape[0])
    for idx in range(nodes.shape[0]):
        j = nodes[idx]
        acc = 0.0
        for m in range(adj_ptr[j], adj_ptr[j + 1]):
            t = adj_simp[m]
            loc = adj_loc[m]
            s = eps2
            dot = 0.0
            gv = np.zeros(d)
            for c in range(d):
                g = 0.0
                for v in range(k):
                    g += u[verts[t, v]] * grads[t, v, c]
                gv[c] = g
                s += g * g
            if s <= 0.0:
                continue
            for c in range(d):
                dot += gv[c] * grads[t, loc, c]
            acc += gam[t] * _coef(s, p[t]) * dot * area[t]
        out[idx] = acc - load[j]
    return out


@njit(cache=True)
def residual_of(u, nodes, lower, upper, adj_ptr, adj_simp, adj_loc, verts, grads, area, p, gam, eps2, load):
    f = node_forces(u, nodes, adj_ptr, adj_simp, adj_loc, verts, grads, area, p, gam, eps2, load)
    res = 0.0
    for idx in range(nodes.shape[0]):
        j = nodes[idx]
        fj = f[idx]
        if u[j] <= lower[j] and u[j] >= upper[j]:
            r = 0.0
        elif u[j] <= lower[j]:
            r = max(0.0, -fj)
        elif u[j] >= upper[j]:
            r = max(0.0, fj)
        else:
            r = abs(fj)
        if r > res:
            res = r
    return res


@njit(cache=True)
def gauss_seidel(
    u, lower, upper, free, elems, adj_ptr, adj_simp, adj_loc, verts, grads, area, p, gam, eps2, load,
    tol, max_sweeps, omega, scale, energy_trace, update_trace, residual_trace, record_residual,
):
    """Projected nonlinear Gauss-Seidel with optional safeguarded over-relaxation.

    Returns (sweeps, stop_code). energy_trace[0] is the starting energy,
    energy_trace[s] the energy after accepted sweep s.
    """
    maxdeg = 0
    for j in free:
        deg = adj_ptr[j + 1] - adj_ptr[j]
        if deg > maxdeg:
            maxdeg = deg
    d = grads.shape[2]
    G0 = np.zeros((maxdeg, d))
    gj = np.zeros((maxdeg, d))
    pk = np.zeros(maxdeg)
    gk = np.zeros(maxdeg)
    ak = np.zeros(maxdeg)
    backup = u.copy()
    e_prev = total_energy(u, elems, verts, grads, area, p, gam, eps2, load)
    energy_trace[0] = e_prev
    if record_residual:
        residual_trace[0] = residual_of(u, free, lower, upper, adj_ptr, adj_simp, adj_loc, verts, grads, area, p, gam, eps2, load)
    if not math.isfinite(e_prev):
        return 0, NAN
    for sweep in range(1, max_sweeps + 1):
        for j in free:
            backup[j] = u[j]
        big = 0.0
        for j in free:
            deg = _local_setup(j, u, adj_ptr, adj_simp, adj_loc, verts, grads, G0, gj, pk, gk, ak, p, gam, area)
            lo_d = lower[j] - u[j]
            hi_d = upper[j] - u[j]
            if lo_d > 0.0:
                lo_d = 0.0
            if hi_d < 0.0:
                hi_d = 0.0
            ell = load[j]
            delta = _line_min(lo_d, hi_d, deg, G0, gj, pk, gk, ak, eps2, ell, scale)
            if omega != 1.0 and delta != 0.0:
                trial = omega * delta
                if trial < lo_d:
                    trial = lo_d
                if trial > hi_d:
                    trial = hi_d
                if _phi(trial, deg, G0, gj, pk, gk, ak, eps2, ell) <= _phi(0.0, deg, G0, gj, pk, gk, ak, eps2, ell):
                    delta = trial
            nu = u[j] + delta
            if nu < lower[j]:
                nu = lower[j]
            if nu > upper[j]:
                nu = upper[j]
            change = abs(nu - u[j])
            if change > big:
                big = change
            u[j] = nu
        e = total_energy(u, elems, verts, grads, area, p, gam, eps2, load)
        if not math.isfinite(e):
            return sweep, NAN
        if e > e_prev:
            # rounding-level rise: discard the sweep and stop
            for j in free:
                u[j] = backup[j]
            return sweep - 1, STAGNATION
        energy_trace[sweep] = e
        update_trace[sweep] = big
        if record_residual:
            residual_trace[sweep] = residual_of(u, free, lower, upper, adj_ptr, adj_simp, adj_loc, verts, grads, area, p, gam, eps2, load)
        e_prev = e
        if big < tol:
            return sweep, TOL
    return max_sweeps, MAX_SWEEPS
