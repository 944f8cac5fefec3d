"""Signed measures (atoms + nodal density), mollification, total variation and kappa."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate
from scipy.signal import convolve

from .grid import Grid

__all__ = [
    "MeasureData",
    "bump",
    "bump_constant",
    "mollify",
    "total_variation",
    "kappa",
    "l1_mass_check",
    "weak_star_gap",
]

_GL_ORDER = 8


@dataclass(frozen=True, eq=False)
class MeasureData:
    """mu = sum_k w_k delta_{a_k} + rho dx, with rho nodal on the parent grid."""

    positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    density: np.ndarray | None = None

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if pos.shape[0] != w.shape[0]:
            raise ValueError("one weight per atom required")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "weights", w)
        if self.density is not None:
            object.__setattr__(self, "density", np.asarray(self.density, dtype=float))

    @classmethod
    def atoms(cls, positions, weights):
        return cls(np.atleast_2d(positions), np.atleast_1d(weights))

    @classmethod
    def zero(cls, dim=2):
        return cls(np.zeros((0, dim)), np.zeros(0))

    @property
    def n_atoms(self):
        return int(self.weights.shape[0])

    def scaled(self, factor):
        dens = None if self.density is None else self.density * factor
        return MeasureData(self.positions, self.weights * factor, dens)

    def validate(self, grid: Grid):
        if self.n_atoms:
            if self.positions.shape[1] != grid.dim:
                raise ValueError("atom dimension does not match the grid")
            if np.any(grid.containing_cell(self.positions) < 0) or np.any(
                grid.boundary_distance(self.positions) < -1e-12
            ):
                raise ValueError("atoms must lie in the closed domain")
        if self.density is not None and self.density.shape[0] != grid.n_lattice:
            raise ValueError("density must be a nodal array on the grid")


# ---------------------------------------------------------------------------
# mollifier


def _bump_raw(r2):
    out = np.zeros_like(r2)
    inside = r2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


@lru_cache(maxsize=None)
def bump_constant(dim):
    """Normalisation c of c exp(-1/(1-|x|^2)) on the unit ball of R^dim."""
    f = lambda r: math.exp(-1.0 / (1.0 - r * r)) if r < 1 else 0.0
    if dim == 1:
        mass = 2 * integrate.quad(f, 0, 1, epsabs=1e-15, epsrel=1e-13)[0]
    elif dim == 2:
        mass = 2 * np.pi * integrate.quad(lambda r: r * f(r), 0, 1, epsabs=1e-15, epsrel=1e-13)[0]
    else:
        raise ValueError("only dimensions 1 and 2 are supported")
    return 1.0 / mass


def bump(x, i=1.0):
    """phi_i(x) = i^n phi(i x) for the standard mollifier phi (rows of x)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    dim = x.shape[1]
    r2 = np.einsum("ij,ij->i", x, x) * (i * i)
    return bump_constant(dim) * i**dim * _bump_raw(r2)


@lru_cache(maxsize=None)
def _quadrant_rule(dim):
    """Gauss-Legendre points for each quarter-cell, in reference cell coordinates.

    Returns (corners, points, weights): quarter q touches cell corner
    ``corners[q]``; points[q] lie in [0,1]^dim, weights sum to 1/2^dim.
    """
    t, w = leggauss(_GL_ORDER)
    t = 0.25 * (t + 1.0)  # [0, 1/2]
    w = 0.25 * w
    corners = list(np.ndindex(*([2] * dim)))
    pts, wts = [], []
    for c in corners:
        axes = [t + 0.5 * ck for ck in c]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts.append(np.stack([m.ravel() for m in mesh], axis=1))
        wm = np.meshgrid(*([w] * dim), indexing="ij")
        wts.append(np.prod(np.stack([m.ravel() for m in wm], axis=0), axis=0))
    return corners, np.stack(pts), np.stack(wts)


def _box_atoms(mu, i, grid):
    """Integrals of each atom's phi_i over the quarter-cells of domain cells, lumped to nodes."""
    acc = np.zeros(grid.n_lattice)
    corners, pts, wts = _quadrant_rule(grid.dim)
    reach = 1.0 / i + grid.h
    for a, w in zip(mu.positions, mu.weights):
        near = np.flatnonzero(np.all(np.abs(grid.cell_centers - a) < reach, axis=1))
        if near.size == 0:
            continue
        base = grid.origin + grid.h * grid.cell_index[near]
        for q in range(len(corners)):
            x = base[:, None, :] + grid.h * pts[q][None] - a
            vals = bump(x.reshape(-1, grid.dim), i).reshape(near.size, -1)
            contrib = w * (vals @ wts[q]) * grid.cell_area
            np.add.at(acc, grid.cells[near, q], contrib)
    return acc


def _quadrant_kernels(i, grid):
    """K_q[k] = integral of phi_i over quarter q of the dual box of a node at lattice offset k."""
    corners, pts, wts = _quadrant_rule(grid.dim)
    if 1.0 / i <= 0.5 * grid.h:
        # support inside the node's own box: each quarter holds 2^-n of the mass by symmetry
        k = np.zeros((3,) * grid.dim)
        k[(1,) * grid.dim] = 0.5**grid.dim
        return corners, [k.copy() for _ in corners]
    m = int(math.ceil(1.0 / (i * grid.h))) + 1
    offs = np.arange(-m, m + 1)
    mesh = np.meshgrid(*([offs] * grid.dim), indexing="ij")
    off = np.stack([g.ravel() for g in mesh], axis=1)
    kernels = []
    for q, c in enumerate(corners):
        # quarter q of the node's box sits in the cell whose corner c is the node
        cell_origin = -np.asarray(c, dtype=float)
        x = (off[:, None, :] + cell_origin + pts[q][None]) * grid.h
        vals = bump(x.reshape(-1, grid.dim), i).reshape(off.shape[0], -1)
        kernels.append(((vals @ wts[q]) * grid.cell_area).reshape(mesh[0].shape))
    return corners, kernels


def _box_density(mu, i, grid):
    """Density part: lattice masses rho_j w_j convolved with the quarter-box kernels."""
    mass = np.where(grid.in_domain, mu.density * grid.node_weights, 0.0).reshape(grid.shape)
    corners, kernels = _quadrant_kernels(i, grid)
    acc = np.zeros(grid.n_lattice)
    for q, c in enumerate(corners):
        # quarter q of node j's box lies in the domain iff the cell with corner c at j is a domain cell
        has = np.zeros(grid.n_lattice, dtype=bool)
        has[grid.cells[:, q]] = True
        # kernel is indexed by (target - source): a plain convolution
        conv = convolve(mass, kernels[q], mode="same", method="direct")
        acc += np.where(has, conv.ravel(), 0.0)
    return acc


def mollify(mu: MeasureData, i, grid: Grid, quadrature="box"):
    """Nodal values of mu_i = mu * phi_i.

    ``quadrature="box"`` returns dual-box averages (1/w_j) int_{box_j cap Omega} mu_i
    so that nodal quadrature of mu_i is the exact interior mass up to
    Gauss-Legendre error; ``"point"`` evaluates mu_i pointwise at the nodes.
    """
    if i < 1:
        raise ValueError("mollification index must be >= 1")
    mu.validate(grid)
    if quadrature == "point":
        out = np.zeros(grid.n_lattice)
        for a, w in zip(mu.positions, mu.weights):
            out += w * bump(grid.coords - a, i)
        if mu.density is not None:
            src = np.flatnonzero(grid.in_domain & (mu.density != 0))
            for j in src:
                out += mu.density[j] * grid.node_weights[j] * bump(grid.coords - grid.coords[j], i)
        return np.where(grid.in_domain, out, 0.0)
    if quadrature != "box":
        raise ValueError(f"unknown quadrature {quadrature!r}")
    acc = _box_atoms(mu, i, grid) if mu.n_atoms else np.zeros(grid.n_lattice)
    if mu.density is not None:
        acc += _box_density(mu, i, grid)
    out = np.zeros(grid.n_lattice)
    pos = grid.node_weights > 0
    out[pos] = acc[pos] / grid.node_weights[pos]
    return out


# ---------------------------------------------------------------------------
# total variation and kappa


def _region_cells(grid, region):
    if region is None:
        return np.ones(grid.n_cells, dtype=bool)
    region = np.asarray(region)
    if region.dtype != bool or region.shape[0] != grid.n_cells:
        raise ValueError("region must be a boolean cell mask")
    return region


def total_variation(mu: MeasureData, grid: Grid, region=None):
    """|mu|(region): atoms counted through their containing cell plus |density| quadrature."""
    cells = _region_cells(grid, region)
    tv = 0.0
    if mu.n_atoms:
        owner = grid.containing_cell(mu.positions)
        ok = owner >= 0
        tv += float(np.abs(mu.weights[ok][cells[owner[ok]]]).sum())
    if mu.density is not None:
        dc = np.abs(grid.nodal_to_cells(mu.density))
        tv += float(dc[cells].sum() * grid.cell_area)
    return tv


def kappa(mu: MeasureData, grid: Grid, region=None):
    """kappa(D) = |mu|(D) + |D cap Omega| by cell quadrature."""
    cells = _region_cells(grid, region)
    return total_variation(mu, grid, cells) + float(cells.sum() * grid.cell_area)


def l1_mass_check(mu: MeasureData, i_list, grid: Grid, tol=1e-6, quadrature="box"):
    """Per-i report of ||mu_i||_{L^1(Omega)} against |mu|(Omega)."""
    tv = total_variation(mu, grid)
    dist = grid.boundary_distance(mu.positions) if mu.n_atoms else np.zeros(0)
    rows = []
    for i in i_list:
        mi = mollify(mu, i, grid, quadrature)
        l1 = float(np.dot(grid.node_weights, np.abs(mi)))
        near = bool(np.any(dist < 1.0 / i))
        rows.append(
            {
                "i": int(i),
                "l1": l1,
                "total_variation": tv,
                "deficit": tv - l1,
                "ok": bool(l1 <= tv + tol),
                "atoms_near_boundary": near,
            }
        )
    return rows


def weak_star_gap(mu: MeasureData, i, grid: Grid, test_fn, quadrature="box"):
    """|int phi dmu - int phi mu_i dx| for a smooth test function phi."""
    mi = mollify(mu, i, grid, quadrature)
    exact = float(np.dot(mu.weights, test_fn(mu.positions))) if mu.n_atoms else 0.0
    if mu.density is not None:
        exact += float(np.dot(grid.node_weights, mu.density * test_fn(grid.coords)))
    approx = float(np.dot(grid.node_weights, mi * test_fn(grid.coords)))
    return abs(exact - approx)
