"""Variable exponents, the model flux gamma(x)|xi|^{p(x)-2} xi and its frozen averages."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .grid import Grid, SubWindow

__all__ = [
    "ExponentField",
    "WeightField",
    "Flux",
    "FrozenFlux",
    "make_exponent",
    "make_weight",
    "xi_samples",
    "eval_flux",
    "flux_values",
    "flux_jacobian",
    "check_log_holder",
    "verify_structure",
    "bmo_oscillation",
    "freeze_flux",
    "modular_and_luxemburg",
]


# ---------------------------------------------------------------------------
# exponent and weight fields


@dataclass(frozen=True)
class ExponentField:
    """p(x) with closed-form bounds and modulus of continuity."""

    kind: str
    params: dict
    func: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    p_minus: float
    p_plus: float
    omega: Callable[[np.ndarray], np.ndarray] = field(repr=False)

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.func(x)

    @property
    def is_constant(self):
        return self.p_plus == self.p_minus

    def check_range(self, dim):
        """Lower bound p^- > 2 - 1/n required for measure data."""
        if not self.p_minus > 2.0 - 1.0 / dim:
            raise ValueError(f"p^- = {self.p_minus} must exceed 2 - 1/n = {2.0 - 1.0 / dim}")


def make_exponent(kind="constant", **params):
    """Registry of exponent fields by name."""
    if kind == "constant":
        p = float(params.get("p", 2.0))
        return ExponentField(
            kind, {"p": p}, lambda x: np.full(x.shape[0], p), p, p,
            lambda r: np.zeros_like(np.asarray(r, dtype=float)),
        )
    if kind == "sin":
        base = float(params.get("base", 2.0))
        amp = abs(float(params.get("amplitude", 0.3)))
        freq = float(params.get("frequency", 1.0))
        axis = int(params.get("axis", 0))

        def func(x):
            return base + amp * np.sin(2 * np.pi * freq * x[:, axis])

        def omega(r):
            return np.minimum(2 * amp, 2 * np.pi * freq * amp * np.asarray(r, dtype=float))

        pars = {"base": base, "amplitude": amp, "frequency": freq, "axis": axis}
        return ExponentField(kind, pars, func, base - amp, base + amp, omega)
    if kind == "log_singular":
        base = float(params.get("base", 2.0))
        c = abs(float(params.get("c", 0.5)))
        center = np.asarray(params.get("center", [0.0, 0.0]), dtype=float)
        cut = math.exp(-2.0)

        def func(x):
            d = np.linalg.norm(x - center[: x.shape[1]], axis=1)
            d = np.minimum(d, cut)
            with np.errstate(divide="ignore"):
                return np.where(d > 0, base + c / np.log(1.0 / np.maximum(d, 1e-300)), base)

        def omega(r):
            r = np.asarray(r, dtype=float)
            rr = np.clip(r, 1e-300, cut)
            return np.where(r > 0, c / np.log(1.0 / rr), 0.0)

        pars = {"base": base, "c": c, "center": center.tolist()}
        return ExponentField(kind, pars, func, base, base + c / 2.0, omega)
    raise ValueError(f"unknown exponent kind {kind!r}")


@dataclass(frozen=True)
class WeightField:
    kind: str
    params: dict
    func: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    g_min: float
    g_max: float

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.func(x)

    @property
    def is_constant(self):
        return self.g_min == self.g_max


def make_weight(kind="constant", **params):
    """Registry of weights gamma(x) with 0 < gamma_min <= gamma <= gamma_max."""
    if kind == "constant":
        g = float(params.get("value", 1.0))
        out = WeightField(kind, {"value": g}, lambda x: np.full(x.shape[0], g), g, g)
    elif kind == "sin":
        base = float(params.get("base", 1.0))
        amp = abs(float(params.get("amplitude", 0.1)))
        freq = float(params.get("frequency", 1.0))
        axis = int(params.get("axis", 0))
        out = WeightField(
            kind,
            {"base": base, "amplitude": amp, "frequency": freq, "axis": axis},
            lambda x: base + amp * np.sin(2 * np.pi * freq * x[:, axis]),
            base - amp,
            base + amp,
        )
    elif kind == "step":
        base = float(params.get("base", 1.0))
        jump = abs(float(params.get("jump", 0.1)))
        iface = float(params.get("interface", 0.5))
        axis = int(params.get("axis", 0))
        out = WeightField(
            kind,
            {"base": base, "jump": jump, "interface": iface, "axis": axis},
            lambda x: base + jump * np.sign(x[:, axis] - iface),
            base - jump,
            base + jump,
        )
    else:
        raise ValueError(f"unknown weight kind {kind!r}")
    if out.g_min <= 0:
        raise ValueError("weight must be bounded below by a positive constant")
    return out


# ---------------------------------------------------------------------------
# flux


def flux_values(xi, p, gamma, eps=0.0):
    """gamma (|xi|^2 + eps^2)^{(p-2)/2} xi, row-wise; exactly 0 at xi = 0."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    s = np.einsum("ij,ij->i", xi, xi) + eps * eps
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(s > 0, gamma * np.power(np.where(s > 0, s, 1.0), 0.5 * (p - 2.0)), 0.0)
    return coef[:, None] * xi


def flux_energy_density(xi, p, gamma, eps=0.0):
    """gamma/p (|xi|^2 + eps^2)^{p/2}, the potential of :func:`flux_values`."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    s = np.einsum("ij,ij->i", xi, xi) + eps * eps
    return gamma / p * np.power(s, 0.5 * p)


@dataclass(frozen=True)
class Flux:
    """Model nonlinearity a(xi, x) = gamma(x)(|xi|^2 + eps^2)^{(p(x)-2)/2} xi."""

    exponent: ExponentField
    weight: WeightField
    eps_reg: float | None = None

    @property
    def eps(self):
        if self.eps_reg is not None:
            return float(self.eps_reg)
        return 1e-8 if self.exponent.p_minus < 2 else 0.0

    @property
    def lambda1(self):
        # |a| + |xi||D a| <= gamma (1 + max(1, p-1)) |xi|^{p-1}
        return self.weight.g_max * (1.0 + max(1.0, self.exponent.p_plus - 1.0))

    @property
    def lambda2(self):
        return self.weight.g_min * min(1.0, self.exponent.p_minus - 1.0)

    def coefficients(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.exponent(x), self.weight(x)

    def __call__(self, xi, x):
        p, g = self.coefficients(x)
        return flux_values(xi, p, g, self.eps)


def eval_flux(flux, xi, x):
    """a(xi, x) for rows of xi at rows of x (broadcast when x is a single point)."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] == 1 and xi.shape[0] > 1:
        x = np.repeat(x, xi.shape[0], axis=0)
    out = flux(xi, x)
    return out


def flux_jacobian(xi, p, gamma, eps=0.0):
    """Analytic D_xi a: gamma s^{(p-2)/2}[I + (p-2) xi xi^T / s]."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    d = xi.shape[1]
    s = np.einsum("ij,ij->i", xi, xi) + eps * eps
    p = np.broadcast_to(np.asarray(p, dtype=float), s.shape)
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), s.shape)
    base = gamma * np.power(s, 0.5 * (p - 2.0))
    outer = np.einsum("ij,ik->ijk", xi, xi) / s[:, None, None]
    return base[:, None, None] * (np.eye(d)[None] + (p - 2.0)[:, None, None] * outer)


def _fd_jacobian(fun, xi):
    """Central differences with step 1e-6 max(1, |xi|)."""
    xi = np.atleast_2d(xi)
    m, d = xi.shape
    step = 1e-6 * np.maximum(1.0, np.linalg.norm(xi, axis=1))
    jac = np.empty((m, d, d))
    for k in range(d):
        e = np.zeros(d)
        e[k] = 1.0
        plus = fun(xi + step[:, None] * e)
        minus = fun(xi - step[:, None] * e)
        jac[:, :, k] = (plus - minus) / (2 * step[:, None])
    return jac


def xi_samples(dim, n_dir=32, mags=None):
    """Direction x magnitude sample set (32 directions, log-spaced 1e-3..1e3)."""
    if mags is None:
        mags = np.logspace(-3, 3, 13)
    if dim == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        ang = 2 * np.pi * np.arange(n_dir) / n_dir
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return (mags[:, None, None] * dirs[None]).reshape(-1, dim)


# ---------------------------------------------------------------------------
# checks


def check_log_holder(exponent, R, delta, grid=None, n_radii=400):
    """sup_{0<r<=R} omega(r) log(1/r) against delta.

    With ``grid`` the modulus is the brute-force empirical one over node
    pairs (radii below h are skipped); otherwise the registered closed form.
    """
    if not (0 < R < 1):
        raise ValueError("R must lie in (0, 1)")
    if grid is None:
        radii = R * np.logspace(0, -12, n_radii)
        om = exponent.omega(radii)
        mode = "closed_form"
    else:
        pts = grid.coords[grid.in_domain]
        vals = exponent(pts)
        radii = R * np.logspace(0, math.log10(grid.h / R), 60) if R > grid.h else np.array([R])
        om = _empirical_modulus(pts, vals, radii)
        mode = "empirical"
    ratio = om * np.log(1.0 / radii)
    k = int(np.argmax(ratio))
    worst = float(ratio[k])
    return {
        "passes": bool(worst <= delta),
        "worst_ratio": worst,
        "worst_r": float(radii[k]),
        "delta": float(delta),
        "mode": mode,
    }


def _empirical_modulus(pts, vals, radii, chunk=512):
    """omega_emp(r) = max |p(x)-p(y)| over node pairs with |x-y| <= r."""
    radii = np.asarray(radii, dtype=float)
    order = np.argsort(radii)
    rs = radii[order]
    best = np.zeros(rs.size)
    for s in range(0, pts.shape[0], chunk):
        d = np.linalg.norm(pts[s : s + chunk, None, :] - pts[None, :, :], axis=2)
        dv = np.abs(vals[s : s + chunk, None] - vals[None, :])
        d, dv = d.ravel(), dv.ravel()
        o = np.argsort(d)
        d, run = d[o], np.maximum.accumulate(dv[o])
        idx = np.searchsorted(d, rs, side="right") - 1
        cand = np.where(idx >= 0, run[np.maximum(idx, 0)], 0.0)
        best = np.maximum(best, cand)
    out = np.empty_like(best)
    out[order] = best
    return out


def verify_structure(flux, sample_count, seed, dim=2, rtol=1e-4, box=None):
    """Empirical structure constants of the growth, ellipticity and monotonicity bounds."""
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = (np.zeros(dim), np.ones(dim)) if box is None else (np.asarray(box[0]), np.asarray(box[1]))
    x = lo + (hi - lo) * rng.random((sample_count, dim))

    def rand_vec():
        v = rng.standard_normal((sample_count, dim))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return v * np.power(10.0, rng.uniform(-3, 3, sample_count))[:, None]

    xi, eta = rand_vec(), rand_vec()
    p, g = flux.coefficients(x)
    eps = flux.eps
    a_xi = flux_values(xi, p, g, eps)
    a_eta = flux_values(eta, p, g, eps)
    jac = _fd_jacobian(lambda z: flux_values(z, p, g, eps), xi)
    nxi = np.linalg.norm(xi, axis=1)
    growth = (np.linalg.norm(a_xi, axis=1) + nxi * np.linalg.norm(jac, ord=2, axis=(1, 2))) / nxi ** (p - 1)
    eta_u = eta / np.linalg.norm(eta, axis=1, keepdims=True)
    ellip = np.einsum("ij,ijk,ik->i", eta_u, jac, eta_u) / nxi ** (p - 2)

    diff = xi - eta
    lhs = np.einsum("ij,ij->i", a_xi - a_eta, diff)
    nd = np.linalg.norm(diff, axis=1)
    rhs = np.where(
        p >= 2,
        nd**p,
        (nxi**2 + np.linalg.norm(eta, axis=1) ** 2) ** ((p - 2) / 2) * nd**2,
    )
    mono = lhs / rhs
    # degenerate pair xi = eta: both sides vanish
    lhs0 = np.einsum("ij,ij->i", a_xi - a_xi, xi - xi)

    violations = []
    if growth.max() > flux.lambda1 * (1 + rtol):
        violations.append(("growth", float(growth.max()), flux.lambda1))
    if ellip.min() < flux.lambda2 * (1 - rtol):
        violations.append(("ellipticity", float(ellip.min()), flux.lambda2))
    if mono.min() <= 0:
        violations.append(("monotonicity", float(mono.min()), 0.0))
    return {
        "lambda1_emp": float(growth.max()),
        "lambda2_emp": float(ellip.min()),
        "lambda_tilde_emp": float(mono.min()),
        "degenerate_max_abs": float(np.abs(lhs0).max()),
        "violations": violations,
    }


def bmo_oscillation(flux, grid, R, n_centers=64, n_radii=6, seed=0, centers=None):
    """sup over sampled balls of the average of theta(a, B_r(y)).

    theta(x) = sup over sampled xi of |a(xi,x)/|xi|^{p(x)-1} - ball average|,
    evaluated on cell centres of the ball (unregularised quotient).
    """
    if R <= 0:
        raise ValueError("R must be positive")
    xs = xi_samples(grid.dim)
    nxs = np.linalg.norm(xs, axis=1)
    cc = grid.cell_centers
    if centers is None:
        rng = np.random.default_rng(seed)
        pick = rng.choice(grid.n_cells, size=min(n_centers, grid.n_cells), replace=False)
        centers = cc[np.sort(pick)]
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    radii = np.geomspace(min(2 * grid.h, R), R, n_radii)
    p_c, g_c = flux.coefficients(cc)
    best, where = 0.0, None
    for y in centers:
        dist = np.linalg.norm(cc - y, axis=1)
        for r in radii:
            sel = np.flatnonzero(dist < r)
            if sel.size == 0:
                continue
            # quotient Q[c, s, :] = a(xi_s, x_c) / |xi_s|^{p(x_c)-1}
            a = g_c[sel, None, None] * np.power(nxs[None, :, None], p_c[sel, None, None] - 2.0) * xs[None]
            q = a / np.power(nxs[None, :, None], p_c[sel, None, None] - 1.0)
            avg = q.mean(axis=0)
            theta = np.linalg.norm(q - avg[None], axis=2).max(axis=1)
            val = float(theta.mean())
            if val > best:
                best, where = val, (y.tolist(), float(r))
    return {"sup_average": best, "argmax": where}


# ---------------------------------------------------------------------------
# frozen flux


@dataclass(frozen=True)
class FrozenFlux:
    """Window average of B(xi,x) = a(xi,x)|xi|^{p2-p(x)} over the upper half window."""

    p2: float
    p1: float
    gamma_bar: float
    eps: float
    p_cells: np.ndarray = field(repr=False)
    gamma_cells: np.ndarray = field(repr=False)
    lambda1: float = 0.0
    lambda2: float = 0.0

    def __call__(self, xi):
        """B-bar(xi) by direct averaging of B(xi, x_c) over the half-window cells."""
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        nxi = np.linalg.norm(xi, axis=1)
        acc = np.zeros_like(xi)
        for pc, gc in zip(self.p_cells, self.gamma_cells):
            a = flux_values(xi, pc, gc, self.eps)
            with np.errstate(divide="ignore"):
                scale = np.where(nxi > 0, np.power(np.where(nxi > 0, nxi, 1.0), self.p2 - pc), 0.0)
            acc += a * scale[:, None]
        return acc / len(self.p_cells)

    def solver_model(self):
        """(p, gamma, eps) of the equivalent constant-coefficient model flux."""
        return self.p2, self.gamma_bar, self.eps

    def structure(self, sample_count=2000, seed=0, dim=2):
        """Empirical growth/ellipticity constants of B-bar against 3 Lambda1 and Lambda2/2."""
        rng = np.random.default_rng(seed)
        v = rng.standard_normal((sample_count, dim))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        xi = v * np.power(10.0, rng.uniform(-2, 2, sample_count))[:, None]
        eta = rng.standard_normal((sample_count, dim))
        eta /= np.linalg.norm(eta, axis=1, keepdims=True)
        b = self(xi)
        jac = _fd_jacobian(self, xi)
        nxi = np.linalg.norm(xi, axis=1)
        growth = (np.linalg.norm(b, axis=1) + nxi * np.linalg.norm(jac, ord=2, axis=(1, 2))) / nxi ** (self.p2 - 1)
        ellip = np.einsum("ij,ijk,ik->i", eta, jac, eta) / nxi ** (self.p2 - 2)
        return {
            "growth_max": float(growth.max()),
            "growth_bound": 3 * self.lambda1,
            "ellipticity_min": float(ellip.min()),
            "ellipticity_bound": 0.5 * self.lambda2,
        }


def freeze_flux(flux, sub: SubWindow, check=True):
    """Frozen field of a boundary window Omega_{8r}, with 8r = ``sub.radius``."""
    grid = sub.grid
    pv = flux.exponent(grid.coords[sub.node_mask])
    p2, p1 = float(pv.max()), float(pv.min())
    r = sub.radius / 8.0
    if check:
        if not sub.flat:
            raise ValueError("geometric setting fails on this window")
        osc_bound = float(flux.exponent.omega(16 * r))
        if p2 - p1 > osc_bound + 1e-14:
            raise ValueError(f"exponent oscillation {p2 - p1} exceeds omega(16r) = {osc_bound}")
    cells = sub.cell_mask.copy()
    if sub.normal is not None:
        cells &= sub.normal_coordinate(grid.cell_centers) > 0
    cc = grid.cell_centers[cells]
    if cc.shape[0] == 0:
        raise ValueError("empty upper half window")
    p_c, g_c = flux.coefficients(cc)
    return FrozenFlux(
        p2=p2,
        p1=p1,
        gamma_bar=float(g_c.mean()),
        eps=flux.eps,
        p_cells=p_c,
        gamma_cells=g_c,
        lambda1=flux.lambda1,
        lambda2=flux.lambda2,
    )


# ---------------------------------------------------------------------------
# variable exponent norms


def modular_and_luxemburg(f, exponent, grid: Grid):
    """Modular sum |f|^{p(x_c)} area over cells and the Luxemburg norm.

    ``f`` is nodal (length ``n_lattice``, corner-averaged to cells) or a
    cell array (length ``n_cells``).
    """
    f = np.asarray(f, dtype=float)
    fc = grid.nodal_to_cells(f) if f.shape[0] == grid.n_lattice else f
    pc = exponent(grid.cell_centers)
    absf = np.abs(fc)
    area = grid.cell_area

    def modular(theta):
        return float(np.sum(np.power(absf / theta, pc)) * area)

    rho = modular(1.0)
    if rho == 0.0:
        return {"modular": 0.0, "norm": 0.0}
    pm, pp = exponent.p_minus, exponent.p_plus
    lo = min(rho ** (1 / pm), rho ** (1 / pp))
    hi = max(rho ** (1 / pm), rho ** (1 / pp))
    lo, hi = lo * (1 - 1e-9), hi * (1 + 1e-9)
    norm = brentq(lambda t: modular(t) - 1.0, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    return {"modular": rho, "norm": float(norm)}
