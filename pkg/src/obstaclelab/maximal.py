"""Truncations, Hardy-Littlewood and order-1 fractional maximal functions, distribution sums."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Grid
from .measure import MeasureData

__all__ = [
    "truncate",
    "phi_trunc",
    "MaximalConfig",
    "radius_sweep",
    "ball_averages",
    "hl_maximal",
    "frac_maximal_1",
    "distribution_sum",
    "unit_ball_volume",
]


def truncate(y, k):
    """T_k(y) = y on |y| <= k, k sgn(y) otherwise."""
    if np.any(np.asarray(k) <= 0):
        raise ValueError("truncation level must be positive")
    return np.clip(y, -k, k)


def phi_trunc(t, k):
    """Phi_k(t) = T_1(t - T_k(t)): zero on |t| <= k, saturating at +-1."""
    t = np.asarray(t, dtype=float)
    out = truncate(t - truncate(t, k), 1.0)
    # t - k can round below 1 even when |t| >= k + 1 holds in floating point
    return np.where(np.abs(t) >= k + 1.0, np.sign(t), out)


def unit_ball_volume(dim):
    if dim == 1:
        return 2.0
    if dim == 2:
        return math.pi
    return math.pi ** (dim / 2) / math.gamma(dim / 2 + 1)


@dataclass(frozen=True)
class MaximalConfig:
    """Radius sweep r_k = r_min * ratio^k up to the first radius >= r_max.

    With the default ratio sqrt(2) and r_min = h the squared radii are
    h^2 2^k, which keeps ball membership tests exact in lattice units.
    """

    ratio_sq: int = 2
    r_min_cells: float = 1.0
    r_max: float | None = None
    at: str = "nodes"


def radius_sweep(grid: Grid, config: MaximalConfig | None = None):
    """Squared radii in lattice units (exact) and radii in length units."""
    config = config or MaximalConfig()
    r_max = grid.diameter if config.r_max is None else config.r_max
    s = config.r_min_cells**2
    out = []
    while True:
        out.append(s)
        if math.sqrt(s) * grid.h >= r_max:
            break
        s *= config.ratio_sq
    s2 = np.asarray(out, dtype=float)
    return s2, np.sqrt(s2) * grid.h


def _row_ranges(s2, dim, at):
    """For a squared radius s2 (lattice units), list (row offset, col lo, col hi) of the ball.

    Cells are indexed relative to the evaluation point: offsets (a + 1/2) for
    nodes, integer offsets for cells. Membership is the open ball, tested in
    exact integer arithmetic on doubled coordinates.
    """
    shift = 1 if at == "nodes" else 0
    lim = 4 * s2  # compare (2a + shift)^2 + (2b + shift)^2 < 4 s2
    m = int(math.isqrt(int(math.ceil(lim)))) // 2 + 2
    if dim == 1:
        cols = [b for b in range(-m, m + 1) if (2 * b + shift) ** 2 < lim]
        return [(0, min(cols), max(cols))] if cols else []
    rows = []
    for a in range(-m, m + 1):
        ra = (2 * a + shift) ** 2
        cols = [b for b in range(-m, m + 1) if ra + (2 * b + shift) ** 2 < lim]
        if cols:
            rows.append((a, min(cols), max(cols)))
    return rows


def ball_averages(cell_values, grid: Grid, s2_list, at="nodes"):
    """Sums and counts of lattice-cell values over open balls, for every radius.

    ``cell_values`` is defined on domain cells and zero-extended to the whole
    (padded) lattice. Returns (sums, counts) with sums of shape
    (n_radii, n_points) where points are lattice nodes or domain cells.
    """
    cshape = tuple(s - 1 for s in grid.shape)
    lat = np.zeros(cshape)
    lat[tuple(grid.cell_index.T)] = cell_values
    rmax = int(math.ceil(math.sqrt(max(s2_list)))) + 2
    dim = grid.dim
    padded = np.pad(lat, rmax)
    if dim == 1:
        padded = padded[None, :]
    prefix = np.concatenate([np.zeros(padded.shape[:-1] + (1,)), np.cumsum(padded, axis=-1)], axis=-1)
    if at == "nodes":
        pshape = grid.shape
    else:
        pshape = cshape
    npx = pshape[0] if dim == 2 else 1
    npy = pshape[-1]
    sums = np.zeros((len(s2_list), npx, npy))
    counts = np.zeros(len(s2_list))
    for k, s2 in enumerate(s2_list):
        acc = np.zeros((npx, npy))
        cnt = 0
        for a, lo, hi in _row_ranges(s2, dim, at):
            cnt += hi - lo + 1
            # nodes: cell (i + a, j + b) for node (i, j) when shift = 1 means centre offset a + 1/2
            r0 = a + rmax if dim == 2 else 0
            rows = prefix[r0 : r0 + npx] if dim == 2 else prefix[:1]
            acc += rows[:, hi + 1 + rmax : hi + 1 + rmax + npy] - rows[:, lo + rmax : lo + rmax + npy]
        sums[k] = acc
        counts[k] = cnt
    sums = sums.reshape(len(s2_list), -1)
    if at == "cells":
        sums = sums[:, np.ravel_multi_index(tuple(grid.cell_index.T), cshape)]
    return sums, counts


def _as_cells(f, grid):
    f = np.asarray(f, dtype=float)
    if f.shape[0] == grid.n_lattice:
        return grid.nodal_to_cells(np.where(grid.in_domain, f, 0.0))
    if f.shape[0] == grid.n_cells:
        return f
    raise ValueError("input must be nodal or a cell array")


def _points(grid, at):
    return grid.coords if at == "nodes" else grid.cell_centers


def hl_maximal(f, grid: Grid, config: MaximalConfig | None = None, region=None):
    """max over the radius sweep of the cell-quadrature average of |f| over B_r(x).

    ``f`` is nodal or per-cell, zero-extended outside ``region`` (a cell mask).
    """
    config = config or MaximalConfig()
    fc = np.abs(_as_cells(f, grid))
    if region is not None:
        fc = np.where(region, fc, 0.0)
    s2, _ = radius_sweep(grid, config)
    sums, counts = ball_averages(fc, grid, s2, config.at)
    return (sums / counts[:, None]).max(axis=0)


def frac_maximal_1(data, grid: Grid, config: MaximalConfig | None = None, lebesgue=False, return_flags=False):
    """M_1 of a measure (atoms divide by the exact ball volume) or of a function.

    For a :class:`MeasureData` the absolutely continuous part and, with
    ``lebesgue=True``, the Lebesgue measure of Omega (the kappa measure) are
    averaged with the discrete lattice ball measure. Points that coincide with
    an atom are flagged in dimension >= 2 (continuum value +inf); their value
    is the smallest-radius evaluation.
    """
    config = config or MaximalConfig()
    s2, radii = radius_sweep(grid, config)
    pts = _points(grid, config.at)
    dim = grid.dim
    if isinstance(data, MeasureData):
        fc = np.zeros(grid.n_cells)
        if data.density is not None:
            fc += np.abs(grid.nodal_to_cells(data.density))
        if lebesgue:
            fc += 1.0
        atoms_pos, atoms_w = data.positions, np.abs(data.weights)
    else:
        fc = np.abs(_as_cells(data, grid))
        atoms_pos, atoms_w = np.zeros((0, dim)), np.zeros(0)
        if lebesgue:
            fc = fc + 1.0
    sums, counts = ball_averages(fc, grid, s2, config.at)
    vals = radii[:, None] * sums / counts[:, None]
    flags = np.zeros(pts.shape[0], dtype=bool)
    if atoms_w.size:
        vol = unit_ball_volume(dim)
        for a, w in zip(atoms_pos, atoms_w):
            d2 = np.sum(((pts - a) / grid.h) ** 2, axis=1)
            inside = d2[None, :] < s2[:, None]
            # r |mu|(B_r) / |B_r| = w r^{1-n} / omega_n
            vals += inside * (w * radii[:, None] ** (1 - dim) / vol)
            if dim >= 2:
                flags |= d2 == 0.0
    out = vals.max(axis=0)
    return (out, flags) if return_flags else out


def distribution_sum(f, lam, m, q, cell_area=1.0, domain_area=None):
    """Lemma-type distribution sum S and the two-sided moment bracket.

    ``f`` holds cell values; level-set measures are sums of cell areas.
    """
    if lam <= 0 or m <= 1 or q <= 0:
        raise ValueError("need lam > 0, m > 1, q > 0")
    af = np.abs(np.asarray(f, dtype=float)).ravel()
    area = af.size * cell_area if domain_area is None else domain_area
    moment = float(np.sum(af**q) * cell_area)
    terms = []
    k = 1
    top = af.max() if af.size else 0.0
    while lam * m**k < top:
        terms.append(m ** (q * k) * np.count_nonzero(af > lam * m**k) * cell_area)
        k += 1
    S = float(np.sum(terms)) if terms else 0.0
    lower = lam**q * S
    upper = lam**q * (area + S)
    c_emp = 1.0
    if moment > 0:
        c_emp = max(lower / moment, moment / upper, 1.0)
    mq = m**q
    return {
        "S": S,
        "terms": terms,
        "moment": moment,
        "lower": lower,
        "upper": upper,
        "c_emp": c_emp,
        "c_bound": max(mq, mq / (mq - 1.0)),
    }
