import numpy as np
import pytest

from obstaclelab.grid import DIRICHLET, EXTERIOR, INTERIOR, build_grid, measure_density_report, window


def test_unit_interval_counts():
    g = build_grid("unit_interval", 3)
    assert g.n_nodes == 3
    assert g.n_cells == 2
    assert g.h == 0.5


def test_unit_square_counts():
    g = build_grid("unit_square", 3)
    assert g.n_nodes == 9
    assert g.n_cells == 4
    assert int(g.interior.sum()) == 1


def test_half_disc_matches_brute_force():
    g = build_grid("half_disc", 65)
    x = g.coords
    inside = (x[:, 0] ** 2 + x[:, 1] ** 2 <= 1 + 1e-12) & (x[:, 1] >= -1e-12)
    assert g.n_nodes == int(inside.sum())
    flat = g.in_domain & (np.abs(x[:, 1]) < 1e-12)
    assert np.all(g.flags[flat] == DIRICHLET)


def test_lshape_requires_odd():
    with pytest.raises(ValueError):
        build_grid("lshape", 8)


@pytest.mark.parametrize("kind", ["unit_interval", "unit_square", "lshape", "half_disc"])
def test_flags_partition(kind):
    g = build_grid(kind, 17)
    assert set(np.unique(g.flags)) <= {EXTERIOR, INTERIOR, DIRICHLET}
    # node weights sum to the domain area
    assert np.isclose(g.node_weights.sum(), g.area)
    assert np.isclose(g.simplex_area.sum(), g.area)


def test_gradient_exact_on_affine():
    g = build_grid("unit_square", 9)
    u = 0.3 + 2.0 * g.coords[:, 0] - g.coords[:, 1]
    grads = g.gradient(u)
    assert np.allclose(grads, [2.0, -1.0])


def test_window_whole_grid():
    g = build_grid("unit_square", 9)
    sub = window(g, [0.5, 0.5], 2.0)
    assert sub.n_nodes == g.n_nodes


def test_window_flat_edge():
    g = build_grid("unit_square", 33)
    sub = window(g, [0.5, 0.0], 0.25, delta=0.0)
    assert sub.flat
    pts = g.coords[sub.node_mask]
    assert np.all(np.linalg.norm(pts - [0.5, 0.0], axis=1) < 0.25)
    assert np.all(pts[:, 1] >= 0)


def test_window_lshape_corner():
    g = build_grid("lshape", 33)
    corner = np.zeros(2)
    sub = window(g, corner, 0.2, delta=0.125)
    brute = g.in_domain & (np.linalg.norm(g.coords - corner, axis=1) < 0.2)
    assert sub.n_nodes == int(brute.sum())
    assert not sub.flat


@pytest.mark.parametrize(
    "x, expected",
    [([0.5, 0.5], 0.0), ([0.5, 0.0], 0.5), ([0.0, 0.0], 0.75)],
)
def test_measure_density(x, expected):
    g = build_grid("unit_square", 65)
    rows = measure_density_report(g, np.array(x), [0.1])
    assert rows[0]["complement_fraction"] == pytest.approx(expected, abs=0.03)
    if expected == 0.0:
        assert rows[0]["ball_over_domain"] == pytest.approx(1.0)
    assert rows[0]["complement_fraction"] >= 0.0
