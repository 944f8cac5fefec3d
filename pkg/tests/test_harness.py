import numpy as np
import pytest

from conftest import dirac2d_instance, green_instance, laplace_flux
from obstaclelab import MeasureData, build_grid, make_exponent
from obstaclelab.exponent import Flux, make_weight
from obstaclelab.fields import make_field
from obstaclelab.harness import (
    HarnessConfig,
    alpha_max,
    approximation_study,
    energy_l1_estimate,
    level_set_decay,
    main_estimate_report,
)
from obstaclelab.quantities import big_m, m_one, psi_divergence, r0_conditions, select_r0


@pytest.mark.parametrize("kind, params", [("affine", {"c0": 0.3, "slope": [1.0, -2.0]}), ("zero", {})])
def test_divergence_vanishes(kind, params):
    g = build_grid("unit_square", 17)
    Psi, _ = psi_divergence(make_field(kind, **params)(g.coords), laplace_flux(), g)
    assert np.max(np.abs(Psi[g.interior])) < 1e-9


def test_divergence_paraboloid():
    g = build_grid("unit_square", 33)
    f = make_field("paraboloid", c0=0.0, k=-0.5, center=[0.0, 0.0])  # |x|^2 / 2
    exact, discrete = psi_divergence(f(g.coords), laplace_flux(), g, f)
    assert np.allclose(exact[g.in_domain], 2.0)
    assert np.max(np.abs(discrete[g.interior] - 2.0)) <= g.h


def test_paraboloid_divergence_p3():
    # div(|D psi| D psi) for psi = |x|^2 / 2 equals (n + 1)|x| in two dimensions
    f = make_field("paraboloid", c0=0.0, k=-0.5, center=[0.0, 0.0])
    x = np.array([[0.3, 0.4]])
    assert f.divergence(x, 3.0, 1.0)[0] == pytest.approx(3 * 0.5)


def test_alpha_range():
    assert alpha_max(2, 2.0) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        HarnessConfig(alpha_list=(0.6,)).validate(2, 2.0)
    with pytest.raises(ValueError):
        HarnessConfig(eps=1.5).validate(2, 2.0)


def test_energy_estimate_zero():
    g = build_grid("unit_square", 17)
    out = energy_l1_estimate(np.zeros(g.n_lattice), None, MeasureData.zero(), laplace_flux(), 0.25, g)
    assert out["lhs"] == 0.0
    assert out["rhs"] == 2.0


def test_energy_estimate_green():
    grid, mu, u, _ = green_instance(129)
    alpha = 0.25
    out = energy_l1_estimate(u, None, mu, laplace_flux(), alpha, grid)
    assert out["lhs"] == pytest.approx(0.5, abs=2 * grid.h)
    assert out["rhs"] == pytest.approx(2.0 + 2.0 ** (1 / (1 - alpha)), rel=1e-14)


def test_energy_estimate_alpha_table():
    grid, mu, u, _ = green_instance(65)
    rows = [energy_l1_estimate(u, None, mu, laplace_flux(), a, grid) for a in (0.4, 0.2, 0.1, 0.05)]
    tracked = [r["rhs_tracked"] for r in rows]
    assert all(np.diff(tracked) > 0)
    with pytest.raises(ValueError):
        energy_l1_estimate(u, None, mu, laplace_flux(), 0.0, grid)


def test_level_sets_zero():
    g = build_grid("unit_square", 17)
    z = np.zeros(g.n_lattice)
    d = level_set_decay(z, MeasureData.zero(), z, z, g, laplace_flux(), 0.5, 2.0, 1.0, 0.1, 0.125)
    assert d["S"] == 0.0
    assert d["rows"][0]["C"] == 0.0


def test_level_sets_green_cutoff():
    grid, mu, u, _ = green_instance(65)
    z = np.zeros(grid.n_lattice)
    R0 = 0.01
    d = level_set_decay(u, mu, z, z, grid, laplace_flux(), 0.5, 2.0, 1.0, R0, 0.125)
    # |Du| = 1/2, so C_k is empty as soon as N^{k+1} lambda_0 > max M|Du|
    assert d["max_M_Du"] == pytest.approx(0.5, abs=1e-6)
    k_cut = int(np.ceil(np.log(0.5 / d["lambda0"]) / np.log(2.0) - 1))
    assert d["lambda0"] > 1
    assert d["k_max"] == max(k_cut, 0)
    assert d["S"] == 0.0


def test_level_set_nesting_2d():
    grid, mu, u, _ = dirac2d_instance(33)
    z = np.zeros(grid.n_lattice)
    # a small lambda_0 stand-in (large R0) populates several levels
    d = level_set_decay(u, mu, z, z, grid, laplace_flux(), 0.5, 2.0, 1.0, 0.45, 0.125)
    assert d["nested"]


def test_estimate_zero_solution():
    g = build_grid("unit_square", 17)
    z = np.zeros(g.n_lattice)
    rep = main_estimate_report(z, MeasureData.zero(), z, z, z, laplace_flux(), 1.0, 0.25, "general", g)
    assert rep.lhs == 0.0
    assert rep.rhs >= 1.0


def test_estimate_green_constant_p():
    grid, mu, u, _ = green_instance(129)
    z = np.zeros(grid.n_lattice)
    rep = main_estimate_report(u, mu, z, z, z, laplace_flux(), 1.0, 0.25, "constant_p", grid)
    assert rep.lhs == pytest.approx(0.5, abs=2 * grid.h)
    assert rep.terms["M1_mu"] == pytest.approx(0.5, rel=1e-12)
    assert rep.ratio == pytest.approx(rep.lhs / rep.rhs)


def test_variant_preconditions():
    g = build_grid("unit_square", 9)
    z = np.zeros(g.n_lattice)
    fl = Flux(make_exponent("sin", base=1.8, amplitude=0.1), make_weight("constant"))
    for variant in ("constant_p", "p_minus_ge_2", "unknown"):
        with pytest.raises(ValueError):
            main_estimate_report(z, MeasureData.zero(), z, z, z, fl, 1.0, 0.1, variant, g)


def test_variants_share_maximal_terms():
    grid, mu, u, _ = dirac2d_instance(33)
    z = np.zeros(grid.n_lattice)
    gen = main_estimate_report(u, mu, z, z, z, laplace_flux(), 1.0, 0.25, "general", grid)
    cp = main_estimate_report(u, mu, z, z, z, laplace_flux(), 1.0, 0.25, "constant_p", grid)
    for key in ("M1_mu", "M1_Psi1", "M1_Psi2"):
        assert gen.terms[key] == pytest.approx(cp.terms[key], rel=1e-12, abs=0)


def test_approximation_density_converges():
    g = build_grid("unit_square", 17)
    dens = np.where(g.in_domain, 1.0, 0.0)
    mu = MeasureData(np.zeros((0, 2)), np.zeros(0), dens)
    res = approximation_study(g, laplace_flux(), mu, [64, 128], [1.5], psi1=None, psi2=None, tol=1e-12)
    assert res["last_modular"][0] < 1e-9


def test_approximation_flags_out_of_theory():
    g = build_grid("unit_square", 17)
    res = approximation_study(g, laplace_flux(), MeasureData.atoms([[0.5, 0.5]], [1.0]), [4, 8], [1.5, 2.0])
    flags = {r["r_id"]: r["out_of_theory"] for r in res["rows"]}
    assert flags == {0: False, 1: True}


def test_r0_selection():
    grid, mu, u, _ = dirac2d_instance(33)
    z = np.zeros(grid.n_lattice)
    M = big_m(mu, grid, z, z, u)
    M1 = m_one(mu, grid, z, z, u, 2.0)
    R0 = select_r0(0.5, M, M1, laplace_flux(), 2, 0.1)
    checks = r0_conditions(R0, 0.5, M, M1, laplace_flux(), 2, 0.1)
    assert checks["r0_main"][0] and checks["omega"][0]
    assert not r0_conditions(1.01 * R0, 0.5, M, M1, laplace_flux(), 2, 0.1)["r0_main"][0]


def test_r0_selection_variable_exponent():
    fl = Flux(make_exponent("sin", base=2.0, amplitude=0.3), make_weight("constant"))
    R0 = select_r0(0.5, 2.0, 2.0, fl, 2, 0.1)
    assert fl.exponent.omega(2 * R0) <= 0.1 / 4 + 1e-12
    assert R0 > 0
