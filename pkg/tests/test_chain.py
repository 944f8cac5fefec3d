import functools

import numpy as np
import pytest

from conftest import laplace_flux
from obstaclelab import MeasureData, ObstacleProblem, assemble, build_grid, make_exponent, solve
from obstaclelab.chain import (
    StageFailure,
    build_window,
    comparison_metrics,
    higher_integrability_check,
    node_set_problem,
    solve_chain,
)
from obstaclelab.fields import make_field
from obstaclelab.quantities import psi_divergence

TOL = 1e-9


@functools.lru_cache(maxsize=None)
def point_mass_instance(n):
    g = build_grid("unit_square", n)
    fl = laplace_flux()
    mu = MeasureData.atoms([[0.5, 0.02]], [1.0])
    f1 = make_field("paraboloid", c0=0.03, k=1.0, center=[0.5, 0.5])
    f2 = make_field("paraboloid", c0=0.05, k=-0.5, center=[0.5, 0.02])
    psi1, psi2 = f1(g.coords), f2(g.coords)
    u, _ = solve(assemble(ObstacleProblem(g, fl, psi1=psi1, psi2=psi2, measure=mu)), tol=TOL)
    Psi1, _ = psi_divergence(psi1, fl, g, f1)
    Psi2, _ = psi_divergence(psi2, fl, g, f2)
    return g, fl, mu, psi1, psi2, u, Psi1, Psi2


def run_chain(n, rho):
    g, fl, mu, psi1, psi2, u, Psi1, Psi2 = point_mass_instance(n)
    cw = build_window(g, [0.5, 0.0], rho / 8, fl, mu, psi1, psi2, u, Psi1, Psi2)
    res = solve_chain(cw, u, fl, psi1, psi2, tol=TOL)
    return cw, res, {row["stage"]: row for row in comparison_metrics(res, fl, psi2)}


def collapsed(n=33):
    g = build_grid("unit_square", n)
    fl = laplace_flux()
    mu = MeasureData.zero()
    big = np.full(g.n_lattice, 1e6)
    zero = np.zeros(g.n_lattice)
    u, _ = solve(assemble(ObstacleProblem(g, fl, psi1=-big, psi2=big, measure=mu)), tol=TOL)
    cw = build_window(g, [0.5, 0.0], 0.4 / 8, fl, mu, -big, big, u, zero, zero)
    return g, cw, solve_chain(cw, u, fl, -big, big, tol=TOL), fl, big


def test_window_constant_exponent():
    cw, _, _ = run_chain(33, 0.4)
    assert cw.p0 == cw.p1 == cw.p2 == 2.0


def test_kappa_without_mass():
    g, cw, _, _, _ = collapsed()
    assert cw.kappa == pytest.approx(cw.area)


def test_kappa_point_mass():
    cw, _, _ = run_chain(65, 0.4)
    assert cw.kappa == pytest.approx(1.0 + cw.area)
    assert "geometric_setting_fails" not in cw.flags


def test_collapsed_chain_zero():
    g, cw, res, fl, big = collapsed()
    rows = {r["stage"]: r for r in comparison_metrics(res, fl)}
    for stage in ("u_z", "z_h", "h_w"):
        assert rows[stage]["lhs"] <= 10 * TOL


def test_frozen_identity():
    _, res, rows = run_chain(65, 0.4)
    f3 = res.sets["f3"]
    assert np.max(np.abs(res.v - res.w)[f3]) <= 10 * TOL


def test_vbar_zero_on_flat_edge():
    _, res, rows = run_chain(65, 0.4)
    assert np.all(res.vbar[res.sets["flat"]] == 0.0)
    assert np.isfinite(rows["vbar_lip"]["ratio"])


def test_u_z_ratio_bounded_over_dyadic_radii():
    ratios = [run_chain(65, rho)[2]["u_z"]["ratio"] for rho in (0.4, 0.2, 0.1)]
    assert max(ratios) <= 3 * np.median(ratios)


def test_stage_failure_on_tiny_window():
    with pytest.raises(StageFailure):
        run_chain(17, 0.05)


def test_node_set_free_nodes_interior():
    g = build_grid("unit_square", 17)
    mask = g.in_domain & (np.linalg.norm(g.coords - 0.5, axis=1) < 0.3)
    el, free = node_set_problem(g, mask)
    assert el.size > 0
    assert np.all(mask[free])
    assert not np.any(free & g.dirichlet)


def test_higher_integrability_affine():
    g = build_grid("unit_square", 33)
    w = 0.5 * g.coords[:, 0] + g.coords[:, 1]
    el, _ = node_set_problem(g, g.in_domain & (np.linalg.norm(g.coords - [0.5, 0.0], axis=1) < 0.4))
    out = higher_integrability_check(w, g, [0.5, 0.0], 0.05, el, make_exponent("constant"), 0.1, 0.5)
    assert out["ratio"] <= 1.0 + 1e-12
