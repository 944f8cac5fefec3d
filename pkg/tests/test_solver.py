import numpy as np
import pytest

from conftest import green_exact, green_instance, laplace_flux
from obstaclelab import Flux, MeasureData, ObstacleProblem, assemble, build_grid, make_exponent, make_weight, solve
from obstaclelab.fields import make_field
from obstaclelab.solver import atom_load, complementarity_residual, truncation_energy_check


def test_feasible_start_is_g():
    g = build_grid("unit_square", 9)
    psi1 = np.full(g.n_lattice, -1.0)
    psi2 = np.full(g.n_lattice, 1.0)
    gv = 0.2 * g.coords[:, 0]
    disc = assemble(ObstacleProblem(g, laplace_flux(), g=gv, psi1=psi1, psi2=psi2))
    assert np.allclose(disc.u0[g.in_domain], gv[g.in_domain])


def test_equation_mode_unbounded():
    g = build_grid("unit_square", 9)
    disc = assemble(ObstacleProblem(g, laplace_flux(), psi1=np.zeros(g.n_lattice), mode="equation"))
    assert np.all(np.isinf(disc.lower)) and np.all(np.isinf(disc.upper))


def test_atom_lumping():
    g = build_grid("unit_square", 9)
    centre = g.cell_centers[10]
    load = atom_load(MeasureData.atoms([centre], [3.0]), g)
    assert load.sum() == 3.0
    assert load[g.nearest_node(centre)] == 3.0
    hat = atom_load(MeasureData.atoms([centre], [3.0]), g, lumping="hat")
    # the P1 hats of the diagonal split sum to one at the cell centre
    assert hat.sum() == pytest.approx(3.0)
    assert np.count_nonzero(hat) == 2


def test_infeasible_box_rejected():
    g = build_grid("unit_square", 9)
    with pytest.raises(ValueError):
        assemble(ObstacleProblem(g, laplace_flux(), psi1=np.ones(g.n_lattice), psi2=np.zeros(g.n_lattice)))


def test_boundary_datum_outside_box_rejected():
    g = build_grid("unit_square", 9)
    with pytest.raises(ValueError):
        assemble(ObstacleProblem(g, laplace_flux(), g=np.full(g.n_lattice, 2.0), psi2=np.ones(g.n_lattice)))


@pytest.mark.parametrize("n", [33, 65, 129])
def test_green_function(n):
    grid, _, u, rep = green_instance(n)
    assert rep.stop_reason == "tol"
    assert np.max(np.abs(u - green_exact(grid.coords[:, 0]))) <= grid.h
    assert np.all(np.diff(rep.energies) <= 0)


def test_coincident_obstacles_pin_solution():
    g = build_grid("unit_square", 17)
    psi = make_field("paraboloid", c0=0.2, k=0.5, center=[0.4, 0.6])(g.coords)
    disc = assemble(ObstacleProblem(g, laplace_flux(), g=psi, psi1=psi, psi2=psi,
                                    measure=MeasureData.atoms([[0.5, 0.5]], [1.0])))
    u, rep = solve(disc)
    assert rep.iterations <= 2
    assert np.array_equal(u[g.in_domain], psi[g.in_domain])


def test_inactive_obstacles_match_equation():
    g = build_grid("unit_square", 33)
    mu = MeasureData.atoms([[0.5, 0.5]], [1.0])
    tol = 1e-10
    u_eq, _ = solve(assemble(ObstacleProblem(g, laplace_flux(), measure=mu, mode="equation")), tol=tol)
    far = np.full(g.n_lattice, 1e3)
    u_ob, _ = solve(assemble(ObstacleProblem(g, laplace_flux(), measure=mu, psi1=-far, psi2=far)), tol=tol)
    assert np.max(np.abs(u_eq - u_ob)) <= 10 * tol


def test_complementarity_residual():
    g = build_grid("unit_square", 17)
    mu = MeasureData.atoms([[0.5, 0.5]], [1.0])
    psi2 = np.full(g.n_lattice, 0.05)
    disc = assemble(ObstacleProblem(g, laplace_flux(), measure=mu, psi2=psi2))
    assert complementarity_residual(disc.u0, disc) > 0.1
    u, rep = solve(disc, tol=1e-12)
    assert rep.active_upper > 0
    assert rep.residual < 1e-8


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_nonlinear_solves_descend(p):
    g = build_grid("unit_square", 17)
    fl = Flux(make_exponent("constant", p=p), make_weight("constant"))
    disc = assemble(ObstacleProblem(g, fl, measure=MeasureData.atoms([[0.5, 0.5]], [1.0])))
    u, rep = solve(disc, tol=1e-9, max_sweeps=20000)
    assert rep.converged
    assert np.all(np.diff(rep.energies) <= 0)
    assert rep.energy == pytest.approx(disc.energy(u))


def test_variable_exponent_solve():
    g = build_grid("unit_square", 17)
    fl = Flux(make_exponent("sin", base=2.0, amplitude=0.3), make_weight("sin", base=1.0, amplitude=0.2))
    # lower obstacle below g = 0 on the boundary, above the unconstrained solution near the corners
    psi1 = make_field("paraboloid", c0=-0.06, k=-0.1, center=[0.5, 0.5])(g.coords)
    disc = assemble(ObstacleProblem(g, fl, measure=MeasureData.atoms([[0.3, 0.5]], [-1.0]), psi1=psi1))
    u, rep = solve(disc, record_residual=True)
    assert rep.converged
    assert np.all(u[g.interior] >= psi1[g.interior])
    assert rep.active_lower > 0
    assert np.all(np.diff(rep.energies) <= 0)


def test_truncation_energy_trivial():
    grid, _, u, _ = green_instance(33)
    rows = truncation_energy_check(u, u, [0.1, 1.0], 1.0, grid, make_exponent("constant"))
    assert all(r["lhs"] == 0.0 for r in rows)


def test_truncation_energy_saturates_and_bounded():
    grid, _, u, _ = green_instance(65)
    g0 = np.zeros(grid.n_lattice)
    big = np.abs(u).max()
    rows = truncation_energy_check(u, g0, [0.05, 0.1, 0.2, 2 * big, 4 * big], 1.0, grid, make_exponent("constant"))
    assert rows[-1]["lhs"] == rows[-2]["lhs"]
    ratios = [r["ratio"] for r in rows[:3]]
    assert max(ratios) < 1.0
