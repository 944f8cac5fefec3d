"""Structured grids, sub-windows and measure-density diagnostics.

Domains live on a uniform tensor lattice with spacing ``h``. Curved or
non-convex domains are obtained by masking lattice nodes, which produces a
staircase boundary. Each lattice cell whose corners all lie in the closed
domain is a *domain cell*; in 2-D every domain cell is split into two P1
triangles along its (0,0)-(1,1) diagonal, in 1-D the cell is its own simplex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "DOMAIN_KINDS",
    "EXTERIOR",
    "INTERIOR",
    "DIRICHLET",
    "Grid",
    "SubWindow",
    "build_grid",
    "window",
    "measure_density_report",
    "lattice_ball_offsets",
]

EXTERIOR, INTERIOR, DIRICHLET = 0, 1, 2

DOMAIN_KINDS = ("unit_interval", "unit_square", "lshape", "half_disc")

_GEOM_EPS = 1e-12


def _closed_member(kind, x):
    """Point classification of the closed domain (vectorised, x of shape (m, d))."""
    if kind == "unit_interval":
        return (x[:, 0] >= -_GEOM_EPS) & (x[:, 0] <= 1 + _GEOM_EPS)
    if kind == "unit_square":
        return np.all((x >= -_GEOM_EPS) & (x <= 1 + _GEOM_EPS), axis=1)
    if kind == "lshape":
        box = np.all((x >= -_GEOM_EPS) & (x <= 1 + _GEOM_EPS), axis=1)
        notch = (x[:, 0] > 0.5 + _GEOM_EPS) & (x[:, 1] > 0.5 + _GEOM_EPS)
        return box & ~notch
    if kind == "half_disc":
        return (x[:, 0] ** 2 + x[:, 1] ** 2 <= 1 + _GEOM_EPS) & (x[:, 1] >= -_GEOM_EPS)
    raise ValueError(f"unsupported domain kind {kind!r}")


def _open_member(kind, x):
    """Point classification of the open domain."""
    if kind == "unit_interval":
        return (x[:, 0] > _GEOM_EPS) & (x[:, 0] < 1 - _GEOM_EPS)
    if kind == "unit_square":
        return np.all((x > _GEOM_EPS) & (x < 1 - _GEOM_EPS), axis=1)
    if kind == "lshape":
        box = np.all((x > _GEOM_EPS) & (x < 1 - _GEOM_EPS), axis=1)
        notch = (x[:, 0] >= 0.5 - _GEOM_EPS) & (x[:, 1] >= 0.5 - _GEOM_EPS)
        return box & ~notch
    if kind == "half_disc":
        return (x[:, 0] ** 2 + x[:, 1] ** 2 < 1 - _GEOM_EPS) & (x[:, 1] > _GEOM_EPS)
    raise ValueError(f"unsupported domain kind {kind!r}")


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform lattice discretisation of one of the supported domains.

    Nodal fields are arrays of length ``n_lattice`` (exterior entries are
    ignored); cell fields are arrays of length ``n_cells`` over domain cells.
    """

    kind: str
    n: int
    h: float
    shape: tuple
    origin: np.ndarray
    coords: np.ndarray
    flags: np.ndarray
    cell_lookup: np.ndarray
    cells: np.ndarray
    cell_index: np.ndarray
    cell_centers: np.ndarray
    simplices: np.ndarray
    simplex_grads: np.ndarray
    simplex_area: np.ndarray
    simplex_cell: np.ndarray
    node_weights: np.ndarray
    area: float = field(default=0.0)

    @property
    def dim(self):
        return len(self.shape)

    @property
    def n_lattice(self):
        return int(self.coords.shape[0])

    @property
    def n_nodes(self):
        """Number of nodes carrying values (interior + Dirichlet)."""
        return int(np.count_nonzero(self.flags != EXTERIOR))

    @property
    def n_cells(self):
        return int(self.cells.shape[0])

    @property
    def cell_area(self):
        return self.h**self.dim

    @property
    def in_domain(self):
        return self.flags != EXTERIOR

    @property
    def interior(self):
        return self.flags == INTERIOR

    @property
    def dirichlet(self):
        return self.flags == DIRICHLET

    @cached_property
    def diameter(self):
        pts = self.coords[self.in_domain]
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        if self.kind == "lshape":
            return float(np.linalg.norm(hi - lo))
        return float(np.linalg.norm(hi - lo))

    @cached_property
    def simplex_centers(self):
        return self.cell_centers[self.simplex_cell]

    def lattice_index(self, flat):
        return np.stack(np.unravel_index(flat, self.shape), axis=-1)

    def flat_index(self, idx):
        return np.ravel_multi_index(tuple(np.asarray(idx).T), self.shape)

    def nearest_node(self, x):
        """Flat index of the lattice node nearest to ``x`` (ties to lower index)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = (x - self.origin) / self.h
        # ties (t exactly k + 1/2) go to the lower lattice index
        idx = np.ceil(t - 0.5).astype(np.int64)
        idx = np.clip(idx, 0, np.array(self.shape) - 1)
        return self.flat_index(idx)

    def containing_cell(self, x):
        """Domain-cell index containing ``x`` (-1 if outside every domain cell)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        raw = (x - self.origin) / self.h
        top = np.array(self.shape) - 1
        outside = np.any((raw < -1e-9) | (raw > top + 1e-9), axis=1)
        # points on the upper lattice edge belong to the last cell
        t = np.clip(np.floor(raw).astype(np.int64), 0, top - 1)
        return np.where(outside, -1, self.cell_lookup[tuple(t.T)])

    def boundary_distance(self, x):
        """Distance from points of the closed domain to its boundary (closed form)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "unit_interval":
            return np.minimum(x[:, 0], 1 - x[:, 0])
        if self.kind == "half_disc":
            return np.minimum(x[:, 1], 1 - np.linalg.norm(x, axis=1))
        if self.kind == "unit_square":
            poly = [(0, 0), (1, 0), (1, 1), (0, 1)]
        else:
            poly = [(0, 0), (1, 0), (1, 0.5), (0.5, 0.5), (0.5, 1), (0, 1)]
        poly = np.asarray(poly, dtype=float)
        best = np.full(x.shape[0], np.inf)
        for a, b in zip(poly, np.roll(poly, -1, axis=0)):
            ab = b - a
            t = np.clip((x - a) @ ab / (ab @ ab), 0.0, 1.0)
            best = np.minimum(best, np.linalg.norm(x - (a + t[:, None] * ab), axis=1))
        return best

    # -- discrete calculus -------------------------------------------------
    def gradient(self, u, simplices=None):
        """Per-simplex gradient of the P1 interpolant of nodal ``u``."""
        sel = slice(None) if simplices is None else simplices
        verts = self.simplices[sel]
        grads = self.simplex_grads[sel]
        return np.einsum("sv,svd->sd", np.asarray(u, dtype=float)[verts], grads)

    def cell_abs_gradient(self, u):
        """|Du| per domain cell: mean of the simplex gradient magnitudes."""
        g = np.linalg.norm(self.gradient(u), axis=1)
        out = np.zeros(self.n_cells)
        np.add.at(out, self.simplex_cell, g * self.simplex_area)
        return out / self.cell_area

    def nodal_to_cells(self, f):
        """Cell-centre values of a nodal field (average of the cell corners)."""
        return np.asarray(f, dtype=float)[self.cells].mean(axis=1)

    def integrate_nodal(self, f, mask=None):
        w = self.node_weights if mask is None else self.node_weights * mask
        return float(np.dot(w, np.asarray(f, dtype=float)))

    def integrate_simplex(self, values, simplices=None):
        area = self.simplex_area if simplices is None else self.simplex_area[simplices]
        return float(np.dot(area, values))


def build_grid(kind, n):
    """Discretise the domain ``kind`` with ``n`` nodes per unit length of axis."""
    if kind not in DOMAIN_KINDS:
        raise ValueError(f"unsupported domain kind {kind!r}; expected one of {DOMAIN_KINDS}")
    n = int(n)
    if n < 3:
        raise ValueError(f"need at least 3 nodes per axis, got {n}")
    if kind == "lshape" and n % 2 == 0:
        raise ValueError("the L-shape needs an odd node count so the re-entrant corner is a node")
    h = 1.0 / (n - 1)
    if kind == "unit_interval":
        shape, origin = (n,), np.array([0.0])
    elif kind in ("unit_square", "lshape"):
        shape, origin = (n, n), np.array([0.0, 0.0])
    else:
        shape, origin = (2 * n - 1, n), np.array([-1.0, 0.0])
    dim = len(shape)

    axes = [origin[k] + h * np.arange(shape[k]) for k in range(dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([m.ravel() for m in mesh], axis=1)
    closed = _closed_member(kind, coords).reshape(shape)
    strict = _open_member(kind, coords).reshape(shape)

    cshape = tuple(s - 1 for s in shape)
    corner_shifts = list(np.ndindex(*([2] * dim)))
    cell_ok = np.ones(cshape, dtype=bool)
    for s in corner_shifts:
        cell_ok &= closed[tuple(slice(si, si + cs) for si, cs in zip(s, cshape))]

    # interior iff strictly inside and every incident lattice cell is a domain cell
    padded = np.zeros(tuple(c + 2 for c in cshape), dtype=bool)
    padded[tuple(slice(1, -1) for _ in cshape)] = cell_ok
    full = np.ones(shape, dtype=bool)
    for s in corner_shifts:
        full &= padded[tuple(slice(si, si + ns) for si, ns in zip(s, shape))]
    flags = np.full(shape, EXTERIOR, dtype=np.int8)
    flags[closed] = DIRICHLET
    flags[closed & strict & full] = INTERIOR
    flags = flags.ravel()

    cell_index = np.argwhere(cell_ok)
    n_cells = cell_index.shape[0]
    cell_lookup = np.full(cshape, -1, dtype=np.int64)
    cell_lookup[tuple(cell_index.T)] = np.arange(n_cells)
    corners = np.stack(
        [np.ravel_multi_index(tuple((cell_index + np.array(s)).T), shape) for s in corner_shifts],
        axis=1,
    )
    cell_centers = origin + h * (cell_index + 0.5)

    if dim == 1:
        simplices = corners.copy()
        grads = np.broadcast_to(np.array([[-1.0], [1.0]]) / h, (n_cells, 2, 1)).copy()
        simplex_cell = np.arange(n_cells)
        simplex_area = np.full(n_cells, h)
    else:
        # corner order from ndindex: 00, 01, 10, 11 (first index is x)
        c00, c01, c10, c11 = corners.T
        t1 = np.stack([c00, c10, c11], axis=1)
        t2 = np.stack([c00, c11, c01], axis=1)
        g1 = np.array([[-1.0, 0.0], [1.0, -1.0], [0.0, 1.0]]) / h
        g2 = np.array([[0.0, -1.0], [1.0, 0.0], [-1.0, 1.0]]) / h
        simplices = np.empty((2 * n_cells, 3), dtype=np.int64)
        simplices[0::2], simplices[1::2] = t1, t2
        grads = np.empty((2 * n_cells, 3, 2))
        grads[0::2], grads[1::2] = g1, g2
        simplex_cell = np.repeat(np.arange(n_cells), 2)
        simplex_area = np.full(2 * n_cells, 0.5 * h * h)

    node_weights = np.zeros(coords.shape[0])
    np.add.at(node_weights, corners.ravel(), h**dim / 2**dim)

    return Grid(
        kind=kind,
        n=n,
        h=h,
        shape=shape,
        origin=origin,
        coords=coords,
        flags=flags,
        cell_lookup=cell_lookup,
        cells=corners,
        cell_index=cell_index,
        cell_centers=cell_centers,
        simplices=simplices,
        simplex_grads=grads,
        simplex_area=simplex_area,
        simplex_cell=simplex_cell,
        node_weights=node_weights,
        area=float(n_cells * h**dim),
    )


# ---------------------------------------------------------------------------
# windows


def _axis_templates(dim):
    for axis in range(dim):
        for sign in (1.0, -1.0):
            yield axis, sign


@dataclass(frozen=True, eq=False)
class SubWindow:
    """Nodes and cells of Omega_rho(x0) = Omega cap B_rho(x0)."""

    grid: Grid
    center: np.ndarray
    radius: float
    node_mask: np.ndarray
    cell_mask: np.ndarray
    normal: tuple | None
    delta: float
    flat: bool

    @property
    def nodes(self):
        return np.flatnonzero(self.node_mask)

    @property
    def n_nodes(self):
        return int(self.node_mask.sum())

    @property
    def area(self):
        return float(self.cell_mask.sum() * self.grid.cell_area)

    def reifenberg(self, delta):
        """Axis-aligned half-space test of the geometric setting at this scale."""
        return _reifenberg_normal(self.grid, self.center, self.radius, delta) is not None

    def normal_coordinate(self, x):
        """Signed distance of points from the flat template (positive inwards)."""
        if self.normal is None:
            raise ValueError("window has no flat template")
        axis, sign = self.normal
        return sign * (np.atleast_2d(x)[:, axis] - self.center[axis])


def _lattice_points_in_ball(grid, x0, rho):
    """All lattice points (inside or outside the bounding box) with |y-x0| < rho."""
    lo = np.floor((x0 - rho - grid.origin) / grid.h).astype(int)
    hi = np.ceil((x0 + rho - grid.origin) / grid.h).astype(int)
    axes = [np.arange(lo[k], hi[k] + 1) for k in range(grid.dim)]
    idx = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
    pts = grid.origin + grid.h * idx
    keep = np.linalg.norm(pts - x0, axis=1) < rho
    return pts[keep]


def _reifenberg_normal(grid, x0, rho, delta):
    """Return the first axis template (axis, sign) passing both inclusions, else None."""
    pts = _lattice_points_in_ball(grid, x0, rho)
    if pts.shape[0] == 0:
        return None
    member = _closed_member(grid.kind, pts)
    for axis, sign in _axis_templates(grid.dim):
        yn = sign * (pts[:, axis] - x0[axis])
        upper_ok = np.all(member[yn > _GEOM_EPS])
        lower_ok = np.all(yn[member] >= -2.0 * delta * rho - _GEOM_EPS)
        if upper_ok and lower_ok:
            return axis, sign
    return None


def window(grid, x0, rho, delta=0.0):
    """Sub-window Omega_rho(x0) with the geometric-setting flag for ``delta``.

    The flag tests B_rho^+ subset Omega_rho subset B_rho cap {y_n > -2 delta rho}
    against the axis-aligned half-space templates through ``x0``; ``rho`` plays
    the role of 8r.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if rho <= 0:
        raise ValueError("window radius must be positive")
    dist = np.linalg.norm(grid.coords - x0, axis=1)
    node_mask = (dist < rho) & grid.in_domain
    if not node_mask.any():
        raise ValueError(f"empty window at {x0.tolist()} with radius {rho}")
    cell_mask = np.linalg.norm(grid.cell_centers - x0, axis=1) < rho
    normal = _reifenberg_normal(grid, x0, rho, delta)
    if normal is None:
        # keep an inward template for half-ball constructions even when the flag fails
        normal = _reifenberg_normal(grid, x0, rho, 1.0)
    return SubWindow(
        grid=grid,
        center=x0,
        radius=float(rho),
        node_mask=node_mask,
        cell_mask=cell_mask,
        normal=normal,
        delta=float(delta),
        flat=_reifenberg_normal(grid, x0, rho, delta) is not None,
    )


# ---------------------------------------------------------------------------
# lattice balls and measure density


def lattice_ball_offsets(radius_over_h, at="nodes", dim=2):
    """Integer cell offsets whose centres lie in the open ball of the given radius.

    Offsets are relative to a node (cell centres at offset + 1/2) or to a cell
    (centres at integer offsets). ``radius_over_h`` may be given squared via a
    ``(value, True)`` tuple for exact tie handling.
    """
    if isinstance(radius_over_h, tuple):
        r2 = float(radius_over_h[0])
    else:
        r2 = float(radius_over_h) ** 2
    shift = 0.5 if at == "nodes" else 0.0
    m = int(math.ceil(math.sqrt(r2))) + 1
    rng = np.arange(-m - 1, m + 1)
    grids = np.meshgrid(*([rng] * dim), indexing="ij")
    off = np.stack([g.ravel() for g in grids], axis=1)
    d2 = np.sum((off + shift) ** 2, axis=1)
    return off[d2 < r2]


def measure_density_report(grid, x, r_list):
    """Ratios |B_r|/|Omega cap B_r| and |Omega^c cap B_r|/|B_r| by cell quadrature.

    Ball measures count every lattice cell (inside or outside the bounding box)
    whose centre lies in B_r(x); the domain part counts domain cells only.
    Degenerate ratios are reported as +inf.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    out = []
    for r in r_list:
        lo = np.floor((x - r - grid.origin) / grid.h).astype(int) - 1
        hi = np.ceil((x + r - grid.origin) / grid.h).astype(int) + 1
        axes = [np.arange(lo[k], hi[k] + 1) for k in range(grid.dim)]
        idx = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
        centers = grid.origin + grid.h * (idx + 0.5)
        inside = np.linalg.norm(centers - x, axis=1) < r
        idx = idx[inside]
        cshape = np.array(grid.cell_lookup.shape)
        in_box = np.all((idx >= 0) & (idx < cshape), axis=1)
        dom = np.zeros(idx.shape[0], dtype=bool)
        dom[in_box] = grid.cell_lookup[tuple(idx[in_box].T)] >= 0
        ball = idx.shape[0]
        omega = int(dom.sum())
        complement = ball - omega
        out.append(
            {
                "r": float(r),
                "ball_over_domain": ball / omega if omega else math.inf,
                "complement_fraction": complement / ball if ball else math.inf,
            }
        )
    return out
