"""Divergence fields Psi_i, window masses, the constants M, M_1 and the R_0 admissibility checks."""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import brentq

from .exponent import Flux, flux_values
from .grid import Grid
from .measure import MeasureData, kappa

__all__ = [
    "psi_divergence",
    "cell_integral",
    "grad_l1",
    "big_m",
    "big_q",
    "m_one",
    "r0_conditions",
    "select_r0",
]


def psi_divergence(psi, flux: Flux, grid: Grid, analytic=None):
    """Psi = div a(D psi, .) at nodes.

    Interior nodes take the weak divergence against the P1 hat,
    Psi_j = -(1/w_j) sum_T a(D psi_T, x_T)·D lambda_j |T|; Dirichlet nodes take
    the mean of their interior neighbours. With ``analytic`` (a NamedField
    with a closed-form divergence) and constant p, gamma the analytic field is
    returned alongside the discrete one.
    """
    psi = np.asarray(psi, dtype=float)
    centers = grid.simplex_centers
    p, gam = flux.coefficients(centers)
    a = flux_values(grid.gradient(psi), p, gam, flux.eps)
    contrib = np.einsum("sd,svd->sv", a, grid.simplex_grads) * grid.simplex_area[:, None]
    acc = np.zeros(grid.n_lattice)
    np.add.at(acc, grid.simplices.ravel(), contrib.ravel())
    out = np.zeros(grid.n_lattice)
    inner = grid.interior
    out[inner] = -acc[inner] / grid.node_weights[inner]
    # boundary nodes: average over interior nodes sharing a simplex
    verts = grid.simplices
    tot = np.zeros(grid.n_lattice)
    cnt = np.zeros(grid.n_lattice)
    for i in range(verts.shape[1]):
        for j in range(verts.shape[1]):
            if i == j:
                continue
            src, dst = verts[:, i], verts[:, j]
            ok = inner[src] & ~inner[dst]
            np.add.at(tot, dst[ok], out[src[ok]])
            np.add.at(cnt, dst[ok], 1.0)
    bnd = grid.dirichlet
    has = bnd & (cnt > 0)
    out[has] = tot[has] / cnt[has]
    lone = np.flatnonzero(bnd & (cnt == 0))
    if lone.size and inner.any():
        idx = np.flatnonzero(inner)
        for j in lone:
            k = idx[np.argmin(np.linalg.norm(grid.coords[idx] - grid.coords[j], axis=1))]
            out[j] = out[k]
    if analytic is not None and analytic.divergence is not None:
        if flux.exponent.is_constant and flux.weight.is_constant:
            exact = analytic.divergence(grid.coords, flux.exponent.p_minus, flux.weight.g_min)
            return np.where(grid.in_domain, exact, 0.0), out
    return out, out


def cell_integral(f, grid: Grid, cells=None):
    """Cell-quadrature integral of |f| (nodal, corner averages) over a cell mask."""
    fc = grid.nodal_to_cells(np.abs(np.where(grid.in_domain, f, 0.0)))
    if cells is not None:
        fc = fc[cells]
    return float(fc.sum() * grid.cell_area)


def grad_l1(u, grid: Grid, elements=None):
    """int |Du| over the given simplices (all by default)."""
    dn = np.linalg.norm(grid.gradient(u, elements), axis=1)
    area = grid.simplex_area if elements is None else grid.simplex_area[elements]
    return float(np.dot(dn, area))


def big_q(mu: MeasureData, grid: Grid, Psi1, Psi2):
    return kappa(mu, grid) + cell_integral(Psi1, grid) + cell_integral(Psi2, grid) + 1.0


def big_m(mu: MeasureData, grid: Grid, Psi1, Psi2, u):
    """M = kappa(Omega) + int|Psi_1| + int|Psi_2| + int|Du| + 1."""
    return kappa(mu, grid) + cell_integral(Psi1, grid) + cell_integral(Psi2, grid) + grad_l1(u, grid) + 1.0


def m_one(mu: MeasureData, grid: Grid, Psi1, Psi2, u, p_minus):
    """c-free universal constant int|Du| + diam^{(n(p^- - 2)+1)/(p^- - 1)} Q^{1/(p^- - 1)} + 1."""
    n = grid.dim
    q = big_q(mu, grid, Psi1, Psi2)
    expo = (n * (p_minus - 2.0) + 1.0) / (p_minus - 1.0)
    return grad_l1(u, grid) + grid.diameter**expo * q ** (1.0 / (p_minus - 1.0)) + 1.0


def _omega_bound(flux: Flux, dim, tau0):
    return min(1.0 / (2 * dim), flux.lambda2 / (2 * flux.lambda1), tau0 / 4.0)


def r0_conditions(R0, R, M, M1, flux: Flux, dim, tau0, r=None, p_osc=None):
    """Evaluate the R_0 admissibility conditions; each entry is (holds, lhs, rhs)."""
    om = flux.exponent.omega
    bound = _omega_bound(flux, dim, tau0)
    out = {
        "compa1": (R0 <= min(R / 2, 1 / M), R0, min(R / 2, 1 / M)),
        "hi1": (R0 <= min(R / 2, 1 / M, 0.25, 1 / (2 * M1)), R0, min(R / 2, 1 / M, 0.25, 1 / (2 * M1))),
        "omega": (float(om(2 * R0)) <= bound, float(om(2 * R0)), bound),
        "r0_main": (R0 <= min(R / 2, 1 / (6 * M1), 1 / (M + 1)), R0, min(R / 2, 1 / (6 * M1), 1 / (M + 1))),
    }
    if r is not None:
        osc = float(om(16 * r))
        out["bc_chain"] = (
            (p_osc if p_osc is not None else 0.0) <= osc + 1e-14 and osc <= float(om(2 * R0)) + 1e-14,
            p_osc if p_osc is not None else 0.0,
            osc,
        )
    return out


def select_r0(R, M, M1, flux: Flux, dim, tau0):
    """Largest R_0 passing R_0 <= min(R/2, 1/(6 M_1), 1/(M+1)) and omega(2 R_0) <= bound."""
    r_cap = min(R / 2.0, 1.0 / (6.0 * M1), 1.0 / (M + 1.0))
    bound = _omega_bound(flux, dim, tau0)
    om = flux.exponent.omega
    if float(om(2 * r_cap)) <= bound:
        return r_cap
    # omega is nondecreasing: bisect for the largest admissible radius
    f = lambda t: float(om(2 * t)) - bound
    if f(1e-300) > 0:
        return 0.0
    return brentq(f, 1e-300, r_cap, xtol=1e-300, rtol=1e-14) * (1 - 1e-12)
