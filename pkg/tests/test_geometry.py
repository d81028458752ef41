import numpy as np
import pytest

from extwave import geometry as G
from extwave.errors import GridTooSmall, NonPositiveRadius


def bumpy3():
    return G.build_profile("bumpy", [1.0, 0.0, 0.0, 0.3])


def test_disk_profile():
    prof = G.disk(1.0)
    theta = np.linspace(0, 2 * np.pi, 1001)
    assert np.allclose(prof.radius(theta), 1.0, atol=1e-15)
    assert prof.R_outer == 1.0
    assert np.allclose(prof.star_margin(theta), 1.0, atol=1e-15)
    assert prof.rho[0] == prof.rho[-1]


def test_bumpy_star_margin_matches_dense_sweep():
    prof = bumpy3()
    theta = 2 * np.pi * np.arange(100_000) / 100_000
    rho = 1 + 0.3 * np.cos(3 * theta)
    drho = -0.9 * np.sin(3 * theta)
    oracle = rho ** 2 / np.sqrt(rho ** 2 + drho ** 2)
    assert oracle.min() > 0
    assert np.allclose(prof.star_margin(theta), oracle, rtol=1e-13, atol=0)
    assert prof.R_outer == pytest.approx(1.3, abs=1e-12)


def test_bumpy_with_negative_radius_is_rejected():
    with pytest.raises(NonPositiveRadius):
        G.build_profile("bumpy", [1.0, 1.5])


def test_ellipse_graph_radius():
    prof = G.build_profile("ellipse-graph", [2.0, 1.0], n_theta=512)
    theta = np.linspace(0, 2 * np.pi, 97)
    x, y = prof.radius(theta) * np.cos(theta), prof.radius(theta) * np.sin(theta)
    assert np.allclose((x / 2) ** 2 + y ** 2, 1.0, atol=1e-10)
    assert prof.R_outer == pytest.approx(2.0, abs=1e-10)


def test_table_profile_round_trip():
    prof = bumpy3()
    samples = prof.radius(2 * np.pi * np.arange(64) / 64)
    again = G.build_profile("table", samples)
    theta = np.linspace(0, 2 * np.pi, 333)
    assert np.allclose(again.radius(theta), prof.radius(theta), atol=1e-13)
    back = G.ObstacleProfile.from_json(prof.to_json())
    assert np.array_equal(back.rho, prof.rho)


def test_unknown_kind():
    with pytest.raises(ValueError):
        G.build_profile("square", [1.0])


@pytest.mark.parametrize("theta,expected", [(0.0, (1.0, 0.0)), (np.pi / 2, (0.0, 1.0))])
def test_disk_normals(theta, expected):
    assert np.allclose(G.boundary_normal(G.disk(1.0), theta), expected, atol=1e-15)


def test_bumpy_normal_is_orthogonal_to_numerical_tangent():
    prof = bumpy3()
    eps = 1e-6
    for theta in (0.0, 0.4, 2.0, 5.5):
        tangent = (G.boundary_point(prof, theta + eps) - G.boundary_point(prof, theta - eps)) / (2 * eps)
        n = G.boundary_normal(prof, theta)
        assert abs(n @ tangent) / np.linalg.norm(tangent) < 1e-8
        # outward: points away from the origin
        assert n @ G.boundary_point(prof, theta) > 0


def test_normals_are_unit():
    theta = np.linspace(0, 2 * np.pi, 1000, endpoint=False)
    n = G.boundary_normal(bumpy3(), theta)
    assert np.allclose(np.linalg.norm(n, axis=-1), 1.0, atol=1e-12)


def test_mask_classification():
    grid = G.GridSpec.make(0.5, 2.0)
    mask = G.build_mask(G.disk(1.0), grid)
    assert mask.obstacle[grid.node_index(0.0, 0.0)]
    assert mask.exterior[grid.node_index(1.5, 0.0)]
    assert mask.obstacle[grid.node_index(1.0, 0.0)]  # boundary node belongs to the obstacle


def test_mask_boundary_list_covers_neighbours():
    grid = G.GridSpec.make(0.1, 2.0)
    mask = G.build_mask(bumpy3(), grid)
    obs = mask.obstacle
    touch = np.zeros_like(obs)
    touch[1:] |= obs[:-1]
    touch[:-1] |= obs[1:]
    touch[:, 1:] |= obs[:, :-1]
    touch[:, :-1] |= obs[:, 1:]
    expected = {tuple(ij) for ij in np.argwhere(touch & ~obs)}
    assert {tuple(ij) for ij in mask.boundary_nodes} == expected
    assert mask.boundary_normals.shape == mask.boundary_nodes.shape


def test_mask_area_close_to_profile_area():
    prof = bumpy3()
    theta = 2 * np.pi * np.arange(4096) / 4096
    area = 0.5 * np.sum(prof.radius(theta) ** 2) * 2 * np.pi / 4096
    grid = G.GridSpec.make(0.01, 1.4)
    mask = G.build_mask(prof, grid)
    assert abs(np.count_nonzero(mask.obstacle) * grid.h ** 2 / area - 1) < 0.05


def test_grid_too_small():
    with pytest.raises(GridTooSmall):
        G.build_mask(G.disk(1.0), G.GridSpec.make(0.5, 1.5))


def test_grid_requires_whole_cells():
    with pytest.raises(ValueError):
        G.GridSpec.make(0.3, 1.0)


def test_free_nodes_exclude_box_edge_and_are_read_only():
    grid = G.GridSpec.make(0.5, 3.0)
    mask = G.build_mask(G.disk(1.0), grid)
    free = mask.free
    assert not free[0].any() and not free[-1].any() and not free[:, 0].any() and not free[:, -1].any()
    assert not (free & mask.obstacle).any()
    with pytest.raises(ValueError):
        free[3, 3] = True


@pytest.mark.parametrize("radius", [1.0, 2.0])
@pytest.mark.parametrize("n", [8, 64])
def test_boundary_quadrature_disk_length(radius, n):
    pts, normals, w = G.boundary_quadrature(G.disk(radius), n)
    assert w.sum() == pytest.approx(2 * np.pi * radius, abs=1e-6)
    assert np.allclose(np.linalg.norm(pts, axis=1), radius)


def test_boundary_quadrature_bumpy_length():
    prof = bumpy3()

    def trap(n):
        th = 2 * np.pi * np.arange(n) / n
        rho = 1 + 0.3 * np.cos(3 * th)
        drho = -0.9 * np.sin(3 * th)
        return np.sum(np.hypot(rho, drho)) * 2 * np.pi / n

    coarse, fine = trap(2048), trap(4096)
    oracle = fine + (fine - coarse) / 3
    assert abs(fine - coarse) < 1e-12
    assert G.boundary_quadrature(prof, 256)[2].sum() == pytest.approx(oracle, abs=1e-8)


def test_boundary_quadrature_needs_eight_points():
    with pytest.raises(ValueError):
        G.boundary_quadrature(G.disk(1.0), 4)
