"""Reference-problem chain u -> z -> h -> w -> v -> v-bar on a boundary window."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exponent import Flux, FrozenFlux, freeze_flux
from .grid import Grid, SubWindow, window
from .measure import MeasureData, kappa
from .quantities import big_m, cell_integral, m_one, r0_conditions
from .solver import ObstacleProblem, SolveReport, SolverFailure, assemble, solve

__all__ = [
    "ComparisonWindow",
    "ChainResult",
    "StageFailure",
    "node_set_problem",
    "build_window",
    "solve_chain",
    "comparison_metrics",
    "higher_integrability_check",
]


class StageFailure(RuntimeError):
    def __init__(self, stage, msg):
        super().__init__(f"[{stage}] {msg}")
        self.stage = stage


def node_set_problem(grid: Grid, node_mask):
    """Simplices with all vertices in ``node_mask`` and the free nodes of that sub-mesh.

    Free nodes are parent-interior nodes whose incident simplices all belong
    to the sub-mesh; every other node of the sub-mesh is Dirichlet.
    """
    verts = grid.simplices
    inside = np.all(node_mask[verts], axis=1)
    elements = np.flatnonzero(inside)
    touched = np.zeros(grid.n_lattice, dtype=bool)
    touched[verts[~inside].ravel()] = True
    used = np.zeros(grid.n_lattice, dtype=bool)
    used[verts[elements].ravel()] = True
    free = used & grid.interior & ~touched
    return elements, free


def _avg(values, grid, elements):
    area = grid.simplex_area[elements]
    tot = area.sum()
    return float(np.dot(values, area) / tot) if tot > 0 else 0.0


@dataclass(eq=False)
class ComparisonWindow:
    sub: SubWindow
    x0: np.ndarray
    r: float
    p0: float
    p1: float
    p2: float
    chi: int
    kappa: float
    psi1_mass: float
    psi2_mass: float
    area: float
    M: float
    M1: float
    R0: float
    tau0: float
    delta: float
    checks: dict
    flags: list = field(default_factory=list)

    def scaling_factor(self, du_avg):
        """Step-2 scaling A (equal to the u -> z bound)."""
        n = self.sub.grid.dim
        base = (self.kappa + self.psi2_mass) / self.r ** (n - 1)
        out = base ** (1.0 / (self.p0 - 1.0))
        if self.chi:
            out += base * du_avg ** (2.0 - self.p0)
        return out


def build_window(grid: Grid, x0, r, flux: Flux, mu: MeasureData, psi1, psi2, u, Psi1, Psi2,
                 R0=None, R=0.5, tau0=0.1, delta=0.125):
    """Window attributes on Omega_{8r}(x0) with admissibility reported, not enforced."""
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if np.any(grid.containing_cell(x0) < 0):
        raise ValueError(f"window centre {x0.tolist()} escapes the grid")
    sub = window(grid, x0, 8 * r, delta)
    flags = []
    if not np.isclose(float(grid.boundary_distance(x0)[0]), 0.0, atol=1e-12):
        flags.append("centre_not_on_boundary")
    if not sub.flat:
        flags.append("geometric_setting_fails")
    pv = flux.exponent(grid.coords[sub.node_mask])
    p0 = float(flux.exponent(x0)[0])
    p1, p2 = float(pv.min()), float(pv.max())
    cells = sub.cell_mask
    kap = kappa(mu, grid, cells)
    m1_mass = cell_integral(Psi1, grid, cells)
    m2_mass = cell_integral(Psi2, grid, cells)
    M = big_m(mu, grid, Psi1, Psi2, u)
    M1 = m_one(mu, grid, Psi1, Psi2, u, flux.exponent.p_minus)
    if R0 is None:
        R0 = 8 * r
    checks = r0_conditions(R0, R, M, M1, flux, grid.dim, tau0, r=r, p_osc=p2 - p1)
    if r > R0 / 8 + 1e-15:
        flags.append("r_exceeds_R0_over_8")
    return ComparisonWindow(
        sub=sub, x0=x0, r=float(r), p0=p0, p1=p1, p2=p2, chi=int(p0 < 2),
        kappa=kap, psi1_mass=m1_mass, psi2_mass=m2_mass, area=float(cells.sum() * grid.cell_area),
        M=M, M1=M1, R0=float(R0), tau0=float(tau0), delta=float(delta), checks=checks, flags=flags,
    )


@dataclass(eq=False)
class ChainResult:
    window: ComparisonWindow
    u: np.ndarray
    z: np.ndarray
    h: np.ndarray
    w: np.ndarray
    v: np.ndarray
    vbar: np.ndarray
    reports: dict
    sets: dict
    frozen: FrozenFlux
    tol: float
    flags: list = field(default_factory=list)


def _stage(name, spec, tol, max_sweeps, omega, u_start=None):
    try:
        disc = assemble(spec)
        out, rep = solve(disc, tol=tol, max_sweeps=max_sweeps, omega=omega, u_start=u_start)
    except (ValueError, SolverFailure) as exc:
        raise StageFailure(name, str(exc)) from exc
    if not rep.converged:
        raise StageFailure(name, f"solver stopped with {rep.stop_reason} after {rep.iterations} sweeps")
    return out, rep, disc


def solve_chain(cw: ComparisonWindow, u, flux: Flux, psi1, psi2, tol=1e-9, max_sweeps=100_000, omega="auto"):
    """Solve z, h, w on Omega_{8r}, v on Omega_{3r} and v-bar on B_{2r}^+."""
    grid = cw.sub.grid
    x0, r = cw.x0, cw.r
    dist = np.linalg.norm(grid.coords - x0, axis=1)
    in_dom = grid.in_domain
    e8, f8 = node_set_problem(grid, cw.sub.node_mask)
    e3, f3 = node_set_problem(grid, in_dom & (dist < 3 * r))
    yn = cw.sub.normal_coordinate(grid.coords) if cw.sub.normal is not None else np.full(grid.n_lattice, np.inf)
    flat_tol = 1e-12
    half = in_dom & (dist < 2 * r) & (yn >= -flat_tol)
    e2p, f2p = node_set_problem(grid, half)
    e2, _ = node_set_problem(grid, in_dom & (dist < 2 * r))
    flat_nodes = half & (np.abs(yn) <= flat_tol)
    f2p &= ~flat_nodes
    reports = {}

    z, reports["z"], _ = _stage(
        "z", ObstacleProblem(grid, flux, g=u, psi1=psi1, mode="lower", source_psi=psi2, elements=e8, free=f8),
        tol, max_sweeps, omega,
    )
    h, reports["h"], _ = _stage(
        "h", ObstacleProblem(grid, flux, g=z, mode="equation", source_psi=psi1, elements=e8, free=f8),
        tol, max_sweeps, omega,
    )
    w, reports["w"], _ = _stage(
        "w", ObstacleProblem(grid, flux, g=h, mode="equation", elements=e8, free=f8), tol, max_sweeps, omega,
    )
    flags = []
    try:
        frozen = freeze_flux(flux, cw.sub, check=True)
    except ValueError as exc:
        flags.append(f"freeze_precondition: {exc}")
        frozen = freeze_flux(flux, cw.sub, check=False)
    if e3.size == 0 or not f3.any():
        raise StageFailure("v", "Omega_3r has no free nodes at this resolution")
    v, reports["v"], _ = _stage(
        "v", ObstacleProblem(grid, frozen, g=w, mode="equation", elements=e3, free=f3),
        tol, max_sweeps, omega, u_start=w,
    )
    if e2p.size == 0:
        raise StageFailure("vbar", "B_2r^+ has no simplices at this resolution")
    gbar = np.where(flat_nodes, 0.0, v)
    vbar, reports["vbar"], _ = _stage(
        "vbar", ObstacleProblem(grid, frozen, g=gbar, mode="equation", elements=e2p, free=f2p),
        tol, max_sweeps, omega,
    )
    used2 = np.zeros(grid.n_lattice, dtype=bool)
    used2[grid.simplices[e2p].ravel()] = True
    vbar = np.where(used2, vbar, 0.0)
    sets = {"e8": e8, "f8": f8, "e3": e3, "f3": f3, "e2p": e2p, "f2p": f2p, "e2": e2, "flat": flat_nodes}
    return ChainResult(cw, np.asarray(u, dtype=float), z, h, w, v, vbar, reports, sets, frozen, tol, flags)


def _rhs_form(mass, r, n, p0, chi, grad_avg):
    base = mass / r ** (n - 1)
    out = base ** (1.0 / (p0 - 1.0))
    if chi:
        out += base * grad_avg ** (2.0 - p0)
    return out


def comparison_metrics(res: ChainResult, flux: Flux, psi2=None):
    """Rows (stage, r, lhs, rhs, ratio, flags) for every comparison of the chain."""
    cw = res.window
    grid = cw.sub.grid
    n = grid.dim
    r, p0, chi, p2 = cw.r, cw.p0, cw.chi, cw.p2
    e8, e3, e2p = res.sets["e8"], res.sets["e3"], res.sets["e2p"]

    def gnorm(f, el):
        return np.linalg.norm(grid.gradient(f, el), axis=1)

    rows = []

    def add(stage, lhs, rhs, extra=()):
        flags = list(extra)
        if rhs == 0:
            flags.append("zero_rhs")
            ratio = math.inf if lhs > 0 else 0.0
        else:
            ratio = lhs / rhs
        rows.append({"stage": stage, "r": r, "lhs": float(lhs), "rhs": float(rhs), "ratio": float(ratio), "flags": ";".join(flags)})

    du = _avg(gnorm(res.u, e8), grid, e8)
    dz = _avg(gnorm(res.z, e8), grid, e8)
    dh = _avg(gnorm(res.h, e8), grid, e8)
    add("u_z", _avg(gnorm(res.u - res.z, e8), grid, e8),
        _rhs_form(cw.kappa + cw.psi2_mass, r, n, p0, chi, du))
    add("z_h", _avg(gnorm(res.z - res.h, e8), grid, e8),
        _rhs_form(cw.area + cw.psi1_mass + cw.psi2_mass, r, n, p0, chi, dz))
    add("h_w", _avg(gnorm(res.h - res.w, e8), grid, e8),
        _rhs_form(cw.area + cw.psi1_mass, r, n, p0, chi, dh))
    if flux.exponent.p_minus >= 2 and psi2 is not None:
        p_s = flux.exponent(grid.simplex_centers[e8])
        mod = _avg(gnorm(psi2, e8) ** p_s, grid, e8)
        add("u_z_pge2", _avg(gnorm(res.u - res.z, e8), grid, e8),
            (cw.kappa / r ** (n - 1)) ** (1.0 / (p0 - 1.0)) + mod ** (1.0 / p0))

    dw8 = _avg(gnorm(res.w, e8), grid, e8)
    lhs_f = _avg(gnorm(res.w - res.v, e3) ** p2, grid, e3) ** (1.0 / p2)
    rhs_f = (cw.delta ** (cw.tau0 / (4.0 + cw.tau0)) * (dw8**p2 + 1.0)) ** (1.0 / p2)
    add("w_v", lhs_f, rhs_f, res.flags)

    cen = grid.simplex_centers
    yn = cw.sub.normal_coordinate(cen) if cw.sub.normal is not None else np.ones(cen.shape[0])
    dist = np.linalg.norm(cen - cw.x0, axis=1)
    br = e2p[(dist[e2p] < r) & (yn[e2p] > 0)]
    dvb = gnorm(res.vbar, e2p)
    lip = float(np.linalg.norm(grid.gradient(res.vbar, br), axis=1).max()) if br.size else 0.0
    add("vbar_lip", lip, _avg(dvb, grid, e2p), [] if br.size else ["empty_B_r_plus"])

    o2 = res.sets["e2"]
    add("v_vbar", _avg(gnorm(res.v - res.vbar, o2) ** p2, grid, o2) if o2.size else 0.0,
        _avg(gnorm(res.v, e3) ** p2, grid, e3), ["observation"])
    return rows


def higher_integrability_check(w, grid: Grid, x0, r, elements, exponent, sigma, beta, rho=None):
    """Reverse-Hoelder quantities for w on Omega_rho subset Omega_{2 rho} subset Omega_{8r}."""
    if not (0 < beta <= 1) or sigma <= 0:
        raise ValueError("need sigma > 0 and 0 < beta <= 1")
    rho = 4 * r if rho is None else rho
    if rho > 4 * r + 1e-15:
        raise ValueError("rho must not exceed 4r")
    cen = grid.simplex_centers
    dist = np.linalg.norm(cen[elements] - np.asarray(x0), axis=1)
    inner = elements[dist < rho]
    outer = elements[dist < 2 * rho]
    o3 = elements[dist < 3 * r]
    dn = lambda el: np.linalg.norm(grid.gradient(w, el), axis=1)
    p_in = exponent(cen[inner])
    p_out = exponent(cen[outer])
    lhs = _avg(dn(inner) ** (p_in * (1 + sigma)), grid, inner) ** (1.0 / (1 + sigma))
    rhs = _avg(dn(outer) ** (p_out * beta), grid, outer) ** (1.0 / beta) + 1.0
    p2 = float(exponent(grid.coords[np.unique(grid.simplices[elements])]).max())
    mom_lhs = _avg(dn(o3) ** p2, grid, o3)
    mom_rhs = _avg(dn(elements), grid, elements) ** p2 + 1.0
    return {
        "lhs": lhs,
        "rhs": rhs,
        "ratio": lhs / rhs,
        "moment_lhs": mom_lhs,
        "moment_rhs": mom_rhs,
        "moment_ratio": mom_lhs / mom_rhs,
    }
