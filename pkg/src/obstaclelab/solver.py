"""Discrete obstacle problems: assembly, projected Gauss-Seidel, optimality and truncation diagnostics."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .exponent import Flux, FrozenFlux, flux_values
from .grid import Grid
from .maximal import phi_trunc, truncate
from .measure import MeasureData

__all__ = [
    "ObstacleProblem",
    "DiscreteVI",
    "SolveReport",
    "SolverFailure",
    "assemble",
    "solve",
    "complementarity_residual",
    "truncation_energy_check",
    "atom_load",
    "divergence_load",
    "simplex_coefficients",
]

MODES = ("double", "lower", "equation")
_STOP = {K.TOL: "tol", K.MAX_SWEEPS: "max_sweeps", K.STAGNATION: "stagnation", K.NAN: "nan"}


class SolverFailure(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ObstacleProblem:
    """Data of one discrete obstacle problem on ``grid`` (or a sub-set of its simplices).

    ``flux`` is a :class:`Flux` or a :class:`FrozenFlux`. Obstacles and the
    boundary datum are nodal arrays; missing obstacles are +-inf. The load
    is the measure ``measure`` (paired with the P1 hats) plus, when
    ``source_psi`` is given, the weak divergence source v -> int a(D psi)·Dv.
    """

    grid: Grid
    flux: Flux | FrozenFlux
    g: np.ndarray | None = None
    psi1: np.ndarray | None = None
    psi2: np.ndarray | None = None
    measure: MeasureData | None = None
    density_load: np.ndarray | None = None
    source_psi: np.ndarray | None = None
    mode: str = "double"
    elements: np.ndarray | None = None
    free: np.ndarray | None = None
    lumping: str = "nearest"


@dataclass(eq=False)
class DiscreteVI:
    grid: Grid
    elements: np.ndarray
    p: np.ndarray
    gamma: np.ndarray
    eps: float
    load: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    free: np.ndarray
    u0: np.ndarray
    adj_ptr: np.ndarray
    adj_simp: np.ndarray
    adj_loc: np.ndarray
    mode: str

    @property
    def dirichlet_nodes(self):
        used = np.zeros(self.grid.n_lattice, dtype=bool)
        used[self.grid.simplices[self.elements].ravel()] = True
        used[self.free] = False
        return np.flatnonzero(used)

    def energy(self, u):
        g = self.grid
        return float(
            K.total_energy(
                np.ascontiguousarray(u, dtype=float), self.elements, g.simplices, g.simplex_grads,
                g.simplex_area, self.p, self.gamma, self.eps**2, self.load,
            )
        )

    def forces(self, u, nodes=None):
        g = self.grid
        nodes = self.free if nodes is None else np.asarray(nodes, dtype=np.int64)
        return K.node_forces(
            np.ascontiguousarray(u, dtype=float), nodes, self.adj_ptr, self.adj_simp, self.adj_loc,
            g.simplices, g.simplex_grads, g.simplex_area, self.p, self.gamma, self.eps**2, self.load,
        )


@dataclass
class SolveReport:
    iterations: int
    max_update: float
    energy: float
    residual: float
    active_lower: int
    active_upper: int
    stop_reason: str
    converged: bool
    energies: np.ndarray = field(repr=False)
    updates: np.ndarray = field(repr=False)
    residuals: np.ndarray | None = field(default=None, repr=False)
    wall_time: float = 0.0
    omega: float = 1.0


# ---------------------------------------------------------------------------
# assembly


def simplex_coefficients(flux, grid: Grid, elements):
    """Per-simplex exponent and weight (cell-centre evaluation), plus eps_reg."""
    if isinstance(flux, FrozenFlux):
        p2, gbar, eps = flux.solver_model()
        n = len(elements)
        return np.full(n, p2), np.full(n, gbar), eps
    centers = grid.simplex_centers[elements]
    p, gam = flux.coefficients(centers)
    return p, gam, flux.eps


def atom_load(measure: MeasureData, grid: Grid, lumping="nearest"):
    """Nodal pairing of the atoms with the P1 hats (nearest-node lumping or exact hat values)."""
    load = np.zeros(grid.n_lattice)
    if measure is None:
        return load
    if measure.n_atoms == 0:
        pass
    elif lumping == "nearest":
        np.add.at(load, grid.nearest_node(measure.positions), measure.weights)
    elif lumping == "hat":
        for a, w in zip(measure.positions, measure.weights):
            cell = int(grid.containing_cell(a)[0])
            if cell < 0:
                raise ValueError(f"atom {a.tolist()} outside every domain cell")
            for s in np.flatnonzero(grid.simplex_cell == cell):
                verts = grid.simplices[s]
                x0 = grid.coords[verts[0]]
                lam = grid.simplex_grads[s] @ (a - x0)
                lam[0] += 1.0
                if np.all(lam >= -1e-12):
                    np.add.at(load, verts, w * np.clip(lam, 0.0, 1.0))
                    break
    else:
        raise ValueError(f"unknown lumping {lumping!r}")
    if measure.density is not None:
        load += np.where(grid.in_domain, measure.density * grid.node_weights, 0.0)
    return load


def divergence_load(psi, flux, grid: Grid, elements=None):
    """l_j = sum_T a(D psi_T, x_T)·D lambda_j |T| over the given simplices."""
    elements = np.arange(grid.simplices.shape[0]) if elements is None else elements
    p, gam, eps = simplex_coefficients(flux, grid, elements)
    dpsi = grid.gradient(psi, elements)
    a = flux_values(dpsi, p, gam, eps)
    contrib = np.einsum("sd,svd->sv", a, grid.simplex_grads[elements]) * grid.simplex_area[elements, None]
    load = np.zeros(grid.n_lattice)
    np.add.at(load, grid.simplices[elements].ravel(), contrib.ravel())
    return load


def _adjacency(grid, elements, n):
    verts = grid.simplices[elements]
    k = verts.shape[1]
    nodes = verts.ravel()
    simp = np.repeat(elements, k)
    loc = np.tile(np.arange(k), len(elements))
    order = np.lexsort((simp, nodes))
    nodes, simp, loc = nodes[order], simp[order], loc[order]
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(ptr, nodes + 1, 1)
    return np.cumsum(ptr), simp.astype(np.int64), loc.astype(np.int64)


def assemble(spec: ObstacleProblem) -> DiscreteVI:
    """Discrete energy, box constraints and load of an obstacle problem."""
    grid = spec.grid
    n = grid.n_lattice
    if spec.mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    elements = (
        np.arange(grid.simplices.shape[0], dtype=np.int64)
        if spec.elements is None
        else np.asarray(spec.elements, dtype=np.int64)
    )
    if elements.size == 0:
        raise ValueError("no elements in the problem")
    p, gam, eps = simplex_coefficients(spec.flux, grid, elements)
    g = np.zeros(n) if spec.g is None else np.asarray(spec.g, dtype=float).copy()
    lower = np.full(n, -np.inf)
    upper = np.full(n, np.inf)
    if spec.mode in ("double", "lower") and spec.psi1 is not None:
        lower = np.asarray(spec.psi1, dtype=float).copy()
    if spec.mode == "double" and spec.psi2 is not None:
        upper = np.asarray(spec.psi2, dtype=float).copy()

    used = np.zeros(n, dtype=bool)
    used[grid.simplices[elements].ravel()] = True
    bad = np.flatnonzero(used & (lower > upper))
    if bad.size:
        raise ValueError(f"infeasible box: psi1 > psi2 at {bad.size} nodes (first {bad[0]})")
    if spec.free is None:
        free_mask = grid.interior.copy()
    else:
        free_in = np.asarray(spec.free)
        if free_in.dtype == bool:
            free_mask = free_in.copy()
        else:
            free_mask = np.zeros(n, dtype=bool)
            free_mask[free_in] = True
    free_mask &= used
    dir_nodes = used & ~free_mask
    tol = 1e-12 * (1 + np.abs(g))
    off = dir_nodes & ((g < lower - tol) | (g > upper + tol))
    if np.any(off):
        raise ValueError(f"boundary datum leaves the obstacle box at {int(off.sum())} Dirichlet nodes")
    # Dirichlet nodes carry g; the box is irrelevant there
    lower = np.where(free_mask, lower, -np.inf)
    upper = np.where(free_mask, upper, np.inf)

    load = atom_load(spec.measure, grid, spec.lumping) if spec.measure is not None else np.zeros(n)
    if spec.density_load is not None:
        load = load + np.asarray(spec.density_load, dtype=float)
    if spec.source_psi is not None:
        load = load + divergence_load(spec.source_psi, spec.flux, grid, elements)
    load = np.where(free_mask, load, 0.0)

    u0 = np.where(used, g, 0.0)
    u0 = np.where(free_mask, np.clip(u0, lower, upper), u0)
    ptr, simp, loc = _adjacency(grid, elements, n)
    return DiscreteVI(
        grid=grid,
        elements=elements,
        p=np.ascontiguousarray(np.broadcast_to(p, elements.shape), dtype=float),
        gamma=np.ascontiguousarray(np.broadcast_to(gam, elements.shape), dtype=float),
        eps=float(eps),
        load=load,
        lower=lower,
        upper=upper,
        free=np.flatnonzero(free_mask).astype(np.int64),
        u0=u0,
        adj_ptr=ptr,
        adj_simp=simp,
        adj_loc=loc,
        mode=spec.mode,
    )


# The kernels index p and gamma by global simplex id; expand to full-length arrays.
def _global_coeffs(disc):
    ns = disc.grid.simplices.shape[0]
    p = np.full(ns, 2.0)
    gam = np.ones(ns)
    p[disc.elements] = disc.p
    gam[disc.elements] = disc.gamma
    return p, gam


def auto_omega(disc):
    """Over-relaxation 2/(1 + sin(pi h/L)) with L the extent of the free region."""
    if disc.free.size == 0:
        return 1.0
    pts = disc.grid.coords[disc.free]
    extent = float((pts.max(axis=0) - pts.min(axis=0)).max()) + 2 * disc.grid.h
    return 2.0 / (1.0 + math.sin(math.pi * disc.grid.h / extent))


def solve(disc: DiscreteVI, tol=1e-9, max_sweeps=100_000, omega="auto", u_start=None, record_residual=False):
    """Projected nonlinear Gauss-Seidel in lexicographic node order.

    Each free node minimises the 1-D restriction of the energy exactly
    (safeguarded Newton/bisection) and is clamped to its box. With
    ``omega != 1`` the exact step is over-relaxed whenever that does not raise
    the local energy. Stops when the largest nodal update falls below ``tol``.
    """
    g = disc.grid
    om = auto_omega(disc) if omega == "auto" else float(omega)
    if not 0.0 < om < 2.0:
        raise ValueError("omega must lie in (0, 2)")
    u = disc.u0.copy() if u_start is None else np.asarray(u_start, dtype=float).copy()
    if u_start is not None:
        u[disc.free] = np.clip(u[disc.free], disc.lower[disc.free], disc.upper[disc.free])
    p, gam = _global_coeffs(disc)
    energies = np.zeros(max_sweeps + 1)
    updates = np.zeros(max_sweeps + 1)
    residuals = np.zeros(max_sweeps + 1 if record_residual else 1)
    scale = float(max(1.0, np.abs(u).max(initial=0.0))) * g.h
    t0 = time.perf_counter()
    sweeps, code = K.gauss_seidel(
        u, disc.lower, disc.upper, disc.free, disc.elements, disc.adj_ptr, disc.adj_simp, disc.adj_loc,
        g.simplices, g.simplex_grads, g.simplex_area, p, gam, disc.eps**2, disc.load,
        float(tol), int(max_sweeps), om, scale, energies, updates, residuals, bool(record_residual),
    )
    wall = time.perf_counter() - t0
    if code == K.NAN:
        raise SolverFailure(f"non-finite energy after sweep {sweeps}")
    res = complementarity_residual(u, disc)
    lower_act = int(np.count_nonzero(u[disc.free] <= disc.lower[disc.free]))
    upper_act = int(np.count_nonzero(u[disc.free] >= disc.upper[disc.free]))
    report = SolveReport(
        iterations=int(sweeps),
        max_update=float(updates[sweeps]) if sweeps > 0 else 0.0,
        energy=float(energies[sweeps]),
        residual=res,
        active_lower=lower_act,
        active_upper=upper_act,
        stop_reason=_STOP[code],
        converged=code in (K.TOL, K.STAGNATION),
        energies=energies[: sweeps + 1].copy(),
        updates=updates[1 : sweeps + 1].copy(),
        residuals=residuals[: sweeps + 1].copy() if record_residual else None,
        wall_time=wall,
        omega=om,
    )
    return u, report


def complementarity_residual(u, disc: DiscreteVI):
    """Largest violation of the discrete KKT conditions over free nodes."""
    g = disc.grid
    p, gam = _global_coeffs(disc)
    return float(
        K.residual_of(
            np.ascontiguousarray(u, dtype=float), disc.free, disc.lower, disc.upper, disc.adj_ptr,
            disc.adj_simp, disc.adj_loc, g.simplices, g.simplex_grads, g.simplex_area, p, gam,
            disc.eps**2, disc.load,
        )
    )


def _grad_moment(grid, f, p_s, elements=None):
    dn = np.linalg.norm(grid.gradient(f, elements), axis=1)
    area = grid.simplex_area if elements is None else grid.simplex_area[elements]
    return float(np.sum(dn**p_s * area))


def truncation_energy_check(u, g, k_list, K_mass, grid: Grid, exponent):
    """Ratios of sum |D T_k(u-g)|^p |T| to kK + sum |Dg|^p |T|, and the Phi_k band version."""
    p_s = exponent(grid.simplex_centers)
    diff = np.asarray(u, dtype=float) - np.asarray(g, dtype=float)
    gterm = _grad_moment(grid, g, p_s)
    rows = []
    for k in k_list:
        lhs = _grad_moment(grid, truncate(diff, k), p_s)
        rhs = k * K_mass + gterm
        band = _grad_moment(grid, phi_trunc(diff, k), p_s)
        band_rhs = K_mass + gterm
        rows.append(
            {
                "k": float(k),
                "lhs": lhs,
                "rhs": rhs,
                "ratio": lhs / rhs if rhs > 0 else math.inf,
                "band_lhs": band,
                "band_rhs": band_rhs,
                "band_ratio": band / band_rhs if band_rhs > 0 else math.inf,
            }
        )
    return rows
