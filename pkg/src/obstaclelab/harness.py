"""Approximation sequences, the energy L1-estimate, level-set decay and the main estimate report."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import zeta

from .exponent import ExponentField, Flux, make_exponent
from .grid import Grid
from .maximal import MaximalConfig, distribution_sum, frac_maximal_1, hl_maximal, unit_ball_volume
from .measure import MeasureData, mollify, total_variation
from .quantities import cell_integral, grad_l1, psi_divergence
from .solver import ObstacleProblem, SolveReport, assemble, solve

__all__ = [
    "HarnessConfig",
    "EstimateReport",
    "alpha_max",
    "approximation_study",
    "energy_l1_estimate",
    "level_set_decay",
    "main_estimate_report",
    "VARIANTS",
]

VARIANTS = ("general", "p_minus_ge_2", "constant_p")


def alpha_max(dim, p_minus):
    """Upper end of the admissible alpha range, 1/2 (n/(n-1) - 1/(p^- - 1)), capped below 1."""
    ratio = math.inf if dim == 1 else dim / (dim - 1)
    return min(0.5 * (ratio - 1.0 / (p_minus - 1.0)), 1.0 - 1e-12)


@dataclass
class HarnessConfig:
    eps: float = 0.5
    n_level: float = 2.0
    delta: float = 0.125
    q_list: tuple = (0.5, 1.0, 1.5)
    alpha_list: tuple = (0.25,)
    R: float = 0.5
    R0: float | None = None
    tau0: float = 0.1
    i_list: tuple = (4, 8, 16, 32)
    r_list: tuple = (1.5,)
    k_cap: int = 60

    def validate(self, dim, p_minus):
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if not self.n_level > 1:
            raise ValueError("level ratio N must exceed 1")
        if any(q <= 0 for q in self.q_list):
            raise ValueError("moments q must be positive")
        amax = alpha_max(dim, p_minus)
        for a in self.alpha_list:
            if not 0 < a <= amax + 1e-15:
                raise ValueError(f"alpha = {a} outside (0, {amax}]")
        if list(self.i_list) != sorted(self.i_list):
            raise ValueError("mollification indices must increase")


# ---------------------------------------------------------------------------
# approximation study


def _as_exponent(r):
    if isinstance(r, ExponentField):
        return r
    return make_exponent("constant", p=float(r))


def _r_threshold(p, dim):
    if dim == 1:
        return p
    return np.minimum(dim * (p - 1.0) / (dim - 1.0), p)


def approximation_study(grid: Grid, flux: Flux, mu: MeasureData, i_list, r_list, psi1=None, psi2=None, g=None,
                        mode="double", tol=1e-9, max_sweeps=100_000, omega="auto"):
    """Solve with mu_i = mu * phi_i for each i and tabulate gradient modulars between pairs."""
    cen = grid.simplex_centers
    p_s = flux.exponent(cen)
    sols, reports = [], []
    prev = None
    for i in i_list:
        mi = mollify(mu, i, grid)
        spec = ObstacleProblem(grid, flux, g=g, psi1=psi1, psi2=psi2, measure=MeasureData(np.zeros((0, grid.dim)), np.zeros(0), mi), mode=mode)
        u, rep = solve(assemble(spec), tol=tol, max_sweeps=max_sweeps, omega=omega, u_start=prev)
        sols.append(u)
        reports.append(rep)
        prev = u
    grads = [grid.gradient(u) for u in sols]
    rows = []
    for rid, r in enumerate(r_list):
        rf = _as_exponent(r)
        r_s = rf(cen)
        out_of_theory = bool(np.any(r_s >= _r_threshold(p_s, grid.dim) - 1e-14))
        for a in range(len(i_list)):
            for b in range(a + 1, len(i_list)):
                diff = np.linalg.norm(grads[a] - grads[b], axis=1)
                modular = float(np.sum(diff**r_s * grid.simplex_area))
                rows.append(
                    {
                        "i": int(i_list[a]),
                        "j": int(i_list[b]),
                        "r_id": rid,
                        "consecutive": b == a + 1,
                        "modular": modular,
                        "out_of_theory": out_of_theory,
                    }
                )
    consec = {}
    for row in rows:
        if row["consecutive"]:
            consec.setdefault(row["r_id"], []).append(row["modular"])
    decreasing = {rid: bool(np.all(np.diff(v) < 0)) for rid, v in consec.items()}
    last = {rid: v[-1] for rid, v in consec.items() if v}
    return {"rows": rows, "u": sols[-1], "solutions": sols, "reports": reports,
            "decreasing": decreasing, "last_modular": last}


# ---------------------------------------------------------------------------
# energy L1 estimate


def energy_l1_estimate(u, g, mu: MeasureData, flux: Flux, alpha, grid: Grid, G=None):
    """int|Du| against the c-free bound with exponent 1/((p^- - 1)(1 - alpha)).

    ``zeta_factor`` is the explicit alpha-dependent factor zeta(1 + alpha(p^- - 1))^{1/p^-}
    inside the constant; ``rhs_tracked`` multiplies the power term by it.
    """
    pm = flux.exponent.p_minus
    amax = alpha_max(grid.dim, pm)
    if not 0 < alpha <= amax + 1e-15:
        raise ValueError(f"alpha = {alpha} outside (0, {amax}]")
    g = np.zeros(grid.n_lattice) if g is None else np.asarray(g, dtype=float)
    if G is None:
        G, _ = psi_divergence(g, flux, grid)
    tv = total_variation(mu, grid)
    div_g = cell_integral(G, grid)
    dg = grad_l1(g, grid)
    base1 = tv + div_g + dg + 1.0
    base2 = tv + div_g + 1.0
    expo = 1.0 / ((pm - 1.0) * (1.0 - alpha))
    power = base2**expo
    lhs = grad_l1(u, grid)
    zf = float(zeta(1.0 + alpha * (pm - 1.0))) ** (1.0 / pm)
    rhs = base1 + power
    return {
        "alpha": float(alpha),
        "lhs": lhs,
        "linear_term": base1,
        "power_base": base2,
        "exponent": expo,
        "power_term": power,
        "rhs": rhs,
        "ratio": lhs / rhs,
        "zeta_factor": zf,
        "rhs_tracked": base1 + zf * power,
    }


# ---------------------------------------------------------------------------
# level sets


def _cells_cfg():
    return MaximalConfig(at="cells")


def level_fields(u, mu, Psi1, Psi2, grid: Grid, flux: Flux, variant="general", psi1=None, psi2=None):
    """Cell fields M|Du|, M_1(kappa)^{1/(p-1)} and the two obstacle fields of the D-sets."""
    cfg = _cells_cfg()
    p_c = flux.exponent(grid.cell_centers)
    du = grid.cell_abs_gradient(u)
    mdu = hl_maximal(du, grid, cfg)
    mk, atom_flags = frac_maximal_1(mu, grid, cfg, lebesgue=True, return_flags=True)
    fields = {"M_Du": mdu, "M1_kappa": mk ** (1.0 / (p_c - 1.0))}
    if variant == "p_minus_ge_2":
        if flux.exponent.p_minus < 2:
            raise ValueError("p_minus_ge_2 variant needs p^- >= 2")
        p_s = flux.exponent(grid.simplex_centers)
        for name, psi in (("obst1", psi1), ("obst2", psi2)):
            dn = np.linalg.norm(grid.gradient(psi), axis=1) ** p_s
            cell = np.zeros(grid.n_cells)
            np.add.at(cell, grid.simplex_cell, dn * grid.simplex_area)
            fields[name] = hl_maximal(cell / grid.cell_area, grid, cfg) ** (1.0 / p_c)
    else:
        fields["obst1"] = frac_maximal_1(Psi1, grid, cfg) ** (1.0 / (p_c - 1.0))
        fields["obst2"] = frac_maximal_1(Psi2, grid, cfg) ** (1.0 / (p_c - 1.0))
    return fields, atom_flags


def level_set_decay(u, mu, Psi1, Psi2, grid: Grid, flux: Flux, eps, n_level, q, R0, delta,
                    variant="general", psi1=None, psi2=None, k_cap=60):
    """Tables of |C_{N,k}| and |D_{N,k}| with covering, nesting and decay checks."""
    fields, atom_flags = level_fields(u, mu, Psi1, Psi2, grid, flux, variant, psi1, psi2)
    n = grid.dim
    lam0 = (grad_l1(u, grid) + 1.0) / (eps * unit_ball_volume(n) * R0**n)
    mdu = fields["M_Du"]
    area = grid.cell_area
    cover_const = eps * (80.0 / 7.0) ** n
    rows = []
    nested = True
    prev_c = None
    k = 0
    while True:
        lev = n_level**k * lam0
        c_set = mdu > n_level * lev
        d_set = (mdu > lev) | (fields["M1_kappa"] > delta * lev) | (fields["obst1"] > delta * lev) | (fields["obst2"] > delta * lev)
        if np.any(c_set & ~d_set):
            nested = False
        if prev_c is not None and np.any(c_set & ~prev_c):
            nested = False
        cm, dm = float(c_set.sum() * area), float(d_set.sum() * area)
        rows.append(
            {
                "k": k,
                "level": lev,
                "C": cm,
                "D": dm,
                "cover_bound": cover_const * dm,
                "cover_ok": bool(cm <= cover_const * dm),
                "term": n_level ** (q * k) * cm,
            }
        )
        prev_c = c_set
        if cm == 0.0 or k >= k_cap:
            break
        k += 1
    terms = [r["term"] for r in rows]
    partial = np.cumsum(terms).tolist()
    nz = [t for t in terms if t > 0]
    terminal = (nz[-1] / nz[-5]) ** 0.25 if len(nz) >= 5 else None
    sandwich = {
        "lambda0": distribution_sum(mdu, lam0, n_level, q, area, grid.area),
        "unit": distribution_sum(mdu, 1.0, n_level, q, area, grid.area),
    }
    return {
        "lambda0": lam0,
        "rows": rows,
        "partial_sums": partial,
        "S": partial[-1],
        "nonzero_terms": len(nz),
        "terminal_ratio": terminal,
        "nested": nested,
        "covering_ok": all(r["cover_ok"] for r in rows),
        "k_max": rows[-1]["k"],
        "sandwich": sandwich,
        "atom_flags": int(atom_flags.sum()),
        "max_M_Du": float(mdu.max()),
    }


# ---------------------------------------------------------------------------
# main estimate


@dataclass
class EstimateReport:
    variant: str
    q: float
    alpha: float
    lhs: float
    terms: dict
    rhs: float
    ratio: float
    flags: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)


def _cell_moment(values, p_c, power_num, grid, denom_shift=1.0):
    """int values^{q/(p(x) - shift)} by cell quadrature."""
    return float(np.sum(values ** (power_num / (p_c - denom_shift))) * grid.cell_area)


def main_estimate_report(u, mu: MeasureData, psi1, psi2, g, flux: Flux, q, alpha, variant, grid: Grid,
                         Psi1=None, Psi2=None, G=None):
    """LHS int|Du|^q and the c-free right-hand side terms of the chosen variant."""
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    pm = flux.exponent.p_minus
    if variant == "p_minus_ge_2" and pm < 2:
        raise ValueError("p_minus_ge_2 variant needs p^- >= 2")
    if variant == "constant_p" and not flux.exponent.is_constant:
        raise ValueError("constant_p variant needs a constant exponent")
    amax = alpha_max(grid.dim, pm)
    if not 0 < alpha <= amax + 1e-15:
        raise ValueError(f"alpha = {alpha} outside (0, {amax}]")
    n = grid.dim
    g = np.zeros(grid.n_lattice) if g is None else np.asarray(g, dtype=float)
    if Psi1 is None:
        Psi1, _ = psi_divergence(psi1, flux, grid)
    if Psi2 is None:
        Psi2, _ = psi_divergence(psi2, flux, grid)
    if G is None:
        G, _ = psi_divergence(g, flux, grid)
    cfg = _cells_cfg()
    p_c = flux.exponent(grid.cell_centers)
    p_s = flux.exponent(grid.simplex_centers)
    lhs = float(np.sum(np.linalg.norm(grid.gradient(u), axis=1) ** q * grid.simplex_area))
    m1_mu, flags_mu = frac_maximal_1(mu, grid, cfg, return_flags=True)
    flags = ["atom_cell_flagged"] if flags_mu.any() else []
    terms = {"M1_mu": _cell_moment(m1_mu, p_c, q, grid)}
    tv = total_variation(mu, grid)
    expo = 1.0 / ((pm - 1.0) * (1.0 - alpha))
    if variant in ("general", "constant_p"):
        terms["M1_Psi1"] = _cell_moment(frac_maximal_1(Psi1, grid, cfg), p_c, q, grid)
        terms["M1_Psi2"] = _cell_moment(frac_maximal_1(Psi2, grid, cfg), p_c, q, grid)
    if variant == "general":
        V = tv + cell_integral(Psi1, grid) + cell_integral(Psi2, grid) + cell_integral(G, grid) + grad_l1(g, grid)
        terms["V"] = V
        terms["V_term"] = (V + V**expo) ** ((n + 1) * q)
        rhs = terms["V_term"] + terms["M1_mu"] + terms["M1_Psi1"] + terms["M1_Psi2"] + 1.0
    elif variant == "p_minus_ge_2":
        def pmod(f):
            return float(np.sum(np.linalg.norm(grid.gradient(f), axis=1) ** p_s * grid.simplex_area))

        W = tv + pmod(psi1) + pmod(psi2) + pmod(g)
        terms["W"] = W
        terms["W_term"] = (W + W**expo) ** ((n + 1) * q)
        for name, psi in (("M_Dpsi1", psi1), ("M_Dpsi2", psi2)):
            dn = np.linalg.norm(grid.gradient(psi), axis=1) ** p_s
            cell = np.zeros(grid.n_cells)
            np.add.at(cell, grid.simplex_cell, dn * grid.simplex_area)
            mval = hl_maximal(cell / grid.cell_area, grid, cfg)
            terms[name] = float(np.sum(mval ** (q / p_c)) * grid.cell_area)
        rhs = terms["W_term"] + terms["M1_mu"] + terms["M_Dpsi1"] + terms["M_Dpsi2"] + 1.0
    else:
        m1g = frac_maximal_1(G, grid, cfg)
        terms["G_term"] = (_cell_moment(m1g, p_c, 1.0, grid) + grad_l1(g, grid)) ** q
        rhs = terms["M1_mu"] + terms["M1_Psi1"] + terms["M1_Psi2"] + terms["G_term"] + 1.0
    return EstimateReport(
        variant=variant, q=float(q), alpha=float(alpha), lhs=lhs, terms=terms, rhs=float(rhs),
        ratio=lhs / rhs, flags=flags,
        provenance={"kind": grid.kind, "N": grid.n, "h": grid.h},
    )
