import numpy as np
import pytest

from extwave import functionals as F
from extwave import geometry as G
from extwave import spectral as P
from extwave.errors import EmptyExterior


def box_operator(h, L):
    grid = G.GridSpec.make(h, L)
    return P.assemble(grid, G.build_mask(None, grid))


def disk_operator(h, L):
    grid = G.GridSpec.make(h, L)
    return P.assemble(grid, G.build_mask(G.disk(1.0), grid))


def random_field(op, rng):
    return op.to_field(rng.standard_normal(op.size))


def test_single_node_operator():
    op = box_operator(0.5, 0.5)
    assert op.size == 1
    assert op.A.toarray().tolist() == [[16.0]]


def test_box_spectrum_closed_form():
    h, L = 0.25, 2.0
    op = box_operator(h, L)
    lam, _ = op.eig()
    k = np.arange(1, op.grid.n - 1)
    # sine modes sin(k pi (x + L) / (2L)) on a box of side 2L
    s = np.sin(k * np.pi * h / (4 * L)) ** 2
    expected = np.sort((4 / h ** 2 * (s[:, None] + s[None, :])).ravel())
    assert np.max(np.abs(lam - expected)) <= 1e-10 * expected.max()
    assert op.lam_min == pytest.approx(expected[0], rel=1e-10)


def test_operator_is_spd_with_obstacle():
    op = disk_operator(0.25, 4.0)
    assert (op.A - op.A.T).nnz == 0
    assert op.lam_min > 0
    # 4/h^2 on the diagonal; each free row has at most four -1/h^2 entries
    assert np.all(op.A.diagonal() == 4 / 0.25 ** 2)
    assert np.all(np.diff(op.A.indptr) <= 5)


def test_empty_exterior():
    grid = G.GridSpec.make(0.5, 1.0)
    n = grid.n
    solid = G.Mask(grid, None, np.full((n, n), G.OBSTACLE, dtype=np.int8), np.zeros((0, 2), int), np.zeros((0, 2)))
    with pytest.raises(EmptyExterior):
        P.assemble(grid, solid)


def test_identity_and_stencil_powers(rng):
    op = disk_operator(0.25, 4.0)
    f = random_field(op, rng)
    assert np.array_equal(P.frac_apply(op, f, 0), f)
    lap = np.zeros_like(f)
    h = op.h
    lap[1:-1, 1:-1] = (4 * f[1:-1, 1:-1] - f[2:, 1:-1] - f[:-2, 1:-1] - f[1:-1, 2:] - f[1:-1, :-2]) / h ** 2
    lap[op.index < 0] = 0.0
    assert np.allclose(P.frac_apply(op, f, 2), lap, rtol=0, atol=1e-10 * np.abs(lap).max())


def test_half_power_quadratic_form(rng):
    op = disk_operator(0.25, 4.0)
    f = random_field(op, rng)
    v = op.to_vector(f)
    q = float(v @ (op.A @ v)) * op.h ** 2
    assert P.frac_norm(op, f, 1) ** 2 == pytest.approx(q, rel=1e-10)
    # the same quadratic form as the edge-based Dirichlet energy
    assert P.frac_norm(op, f, 1) ** 2 == pytest.approx(F.edge_sq_integral(f, op.grid), rel=1e-10)
    g = P.frac_apply(op, f, 1)
    assert np.sqrt(np.sum(g * g)) * op.h == pytest.approx(P.frac_norm(op, f, 1), rel=1e-10)


def test_semigroup(rng):
    op = disk_operator(0.25, 4.0)
    f = random_field(op, rng)
    for s1, s2 in ((0.6, 0.8), (0.5, 0.5), (1.0, -0.4), (0.3, 1.7)):
        a = P.frac_apply(op, P.frac_apply(op, f, s1), s2)
        b = P.frac_apply(op, f, s1 + s2)
        assert np.max(np.abs(a - b)) <= 1e-7 * np.max(np.abs(b))


def test_zero_and_interpolation(rng):
    op = disk_operator(0.25, 4.0)
    assert P.frac_norm(op, np.zeros(op.index.shape), 0.5) == 0
    for _ in range(5):
        f = random_field(op, rng)
        assert P.frac_norm(op, f, 0.5) ** 2 <= P.frac_norm(op, f, 0) * P.frac_norm(op, f, 1) * (1 + 1e-12)


@pytest.mark.parametrize("s", [1.0, 0.5, 1 / 3, -2 / 3, -1.0])
def test_lanczos_agrees_with_dense(s, rng):
    op = disk_operator(0.25, 6.0)
    X, Y = op.grid.mesh()
    f = np.exp(-((X - 3) ** 2 + Y ** 2))
    f[op.index < 0] = 0.0
    lam, U = op.eig()
    for v in (op.to_vector(f), rng.standard_normal(op.size)):
        c = U.T @ v
        exact = np.sum(P._power(lam, s) * c * c)
        assert P._lanczos_quadratic(op.A, v, s) == pytest.approx(exact, rel=1e-8)
        dense = U @ (P._power(lam, s / 2) * c)
        assert np.allclose(P._lanczos_apply(op.A, v, s / 2), dense, rtol=0, atol=1e-7 * np.abs(dense).max())


def test_large_operator_uses_lanczos(rng):
    op = disk_operator(0.125, 4.5)
    assert op.size > P.DENSE_MAX
    f = random_field(op, rng)
    v = op.to_vector(f)
    assert P.frac_norm(op, f, 1) ** 2 == pytest.approx(float(v @ (op.A @ v)) * op.h ** 2, rel=1e-8)
    with pytest.raises(MemoryError):
        op.eig()


def test_pair_norm(rng):
    op = disk_operator(0.5, 4.0)
    f, g = random_field(op, rng), random_field(op, rng)
    assert P.pair_norm(op, f, g, 0.5) == pytest.approx(P.frac_norm(op, f, 0.5) + P.frac_norm(op, g, -0.5))


def test_vector_shape_checks():
    op = disk_operator(0.5, 4.0)
    with pytest.raises(ValueError):
        op.to_vector(np.zeros(op.size + 1))
    assert P.frac_apply(op, np.ones(op.size), 0.5).shape == (op.size,)


def test_dump_coo(tmp_path):
    op = disk_operator(0.5, 3.0)
    path = tmp_path / "A.coo"
    P.dump_coo(op, path)
    lines = path.read_text().splitlines()
    assert lines[0] == f"# {op.size} {op.size} {op.A.nnz}"
    i, j, v = lines[1].split()
    assert op.A[int(i), int(j)] == float(v)
