import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from core.diagnostics import viscous_dissipation
from core.grid import Grid2D, MacVelocity
from tests.dense_ops import neg_laplacian, variable_neg_div_grad


BCS = ["neumann", "periodic"]
seeds = st.integers(min_value=0, max_value=2 ** 32 - 1)


def random_velocity(grid: Grid2D, rng) -> MacVelocity:
    w = MacVelocity(rng.standard_normal((grid.nx + 1, grid.ny)), rng.standard_normal((grid.nx, grid.ny + 1)))
    return grid.enforce_bc(w)


def test_grid_rejects_bad_input():
    with pytest.raises(ValueError):
        Grid2D(4, 16)
    with pytest.raises(ValueError):
        Grid2D(16, 16, lx=-1.0)
    with pytest.raises(ValueError):
        Grid2D(16, 16, bc="dirichlet")


def test_coordinates():
    grid = Grid2D(8, 16, lx=2.0, ly=1.0)
    x, y = grid.cell_centers()
    assert x.shape == (8, 16)
    assert x[0, 0] == pytest.approx(0.125)
    assert y[0, 1] == pytest.approx(1.5 / 16)
    xu, _ = grid.u_faces()
    _, yv = grid.v_faces()
    assert xu.shape == (9, 16) and xu[-1, 0] == pytest.approx(2.0)
    assert yv.shape == (8, 17) and yv[0, -1] == pytest.approx(1.0)


@pytest.mark.parametrize("bc", BCS)
@settings(deadline=None, max_examples=25)
@given(seed=seeds)
def test_summation_by_parts(bc, seed):
    grid = Grid2D(12, 10, lx=1.0, ly=0.7, bc=bc)
    rng = np.random.default_rng(seed)
    f = rng.standard_normal(grid.shape)
    w = random_velocity(grid, rng)
    assert grid.inner(f, grid.divergence(w)) == pytest.approx(-grid.face_inner(grid.gradient(f), w), abs=1e-9)


@pytest.mark.parametrize("bc", BCS)
def test_laplacian_matches_dense(bc):
    grid = Grid2D(8, 8, lx=1.0, ly=2.0, bc=bc)
    f = np.random.default_rng(1).standard_normal(grid.shape)
    dense = neg_laplacian(8, 8, grid.hx, grid.hy, grid.periodic)
    np.testing.assert_allclose(grid.laplacian(f).ravel(), -dense @ f.ravel(), rtol=1e-12, atol=1e-10)


@pytest.mark.parametrize("bc", BCS)
def test_div_coeff_grad_matches_dense(bc):
    grid = Grid2D(8, 8, bc=bc)
    rng = np.random.default_rng(2)
    f = rng.standard_normal(grid.shape)
    c = grid.interpolate_to_faces(1.0 + rng.uniform(0, 1, grid.shape))
    dense = variable_neg_div_grad(8, 8, grid.hx, grid.hy, grid.periodic, c.u, c.v)
    np.testing.assert_allclose(grid.div_coeff_grad(c, f).ravel(), -dense @ f.ravel(), rtol=1e-12, atol=1e-10)


@pytest.mark.parametrize("bc", BCS)
def test_constants(bc):
    grid = Grid2D(8, 8, bc=bc)
    c = np.full(grid.shape, 3.0)
    faces = grid.interpolate_to_faces(c)
    assert np.all(faces.u == 3.0) and np.all(faces.v == 3.0)
    assert np.max(np.abs(grid.laplacian(c))) == 0.0
    assert grid.integrate(c) == pytest.approx(3.0)
    assert grid.mean(c) == pytest.approx(3.0)


def test_neumann_boundary_gradient_vanishes():
    grid = Grid2D(8, 8)
    g = grid.gradient(np.random.default_rng(3).standard_normal(grid.shape))
    assert np.all(g.u[[0, -1], :] == 0.0)
    assert np.all(g.v[:, [0, -1]] == 0.0)


@pytest.mark.parametrize("bc", BCS)
def test_poisson_solve(bc):
    grid = Grid2D(16, 32, lx=1.0, ly=2.0, bc=bc)
    rhs = np.random.default_rng(4).standard_normal(grid.shape)
    q = grid.solve_poisson(rhs)
    assert abs(np.mean(q)) < 1e-12
    np.testing.assert_allclose(grid.laplacian(q), rhs - np.mean(rhs), atol=1e-9)


@pytest.mark.parametrize("bc", BCS)
def test_pack_unpack(bc):
    grid = Grid2D(8, 12, bc=bc)
    w = random_velocity(grid, np.random.default_rng(5))
    back = grid.unpack_velocity(grid.pack_velocity(w))
    np.testing.assert_array_equal(back.u, w.u)
    np.testing.assert_array_equal(back.v, w.v)


@pytest.mark.parametrize("bc", BCS)
def test_viscous_operator_is_symmetric(bc):
    grid = Grid2D(10, 8, bc=bc)
    rng = np.random.default_rng(6)
    eta = 0.5 + rng.uniform(0, 1, grid.shape)
    a, b = random_velocity(grid, rng), random_velocity(grid, rng)
    assert grid.face_inner(grid.viscous(eta, a), b) == pytest.approx(grid.face_inner(a, grid.viscous(eta, b)),
                                                                       rel=1e-10)


@pytest.mark.parametrize("bc", BCS)
def test_viscous_dissipation_identity(bc):
    grid = Grid2D(10, 12, bc=bc)
    rng = np.random.default_rng(7)
    eta = 0.5 + rng.uniform(0, 1, grid.shape)
    w = random_velocity(grid, rng)
    dissipation = viscous_dissipation(grid, eta, w)
    assert dissipation > 0
    assert -grid.face_inner(grid.viscous(eta, w), w) == pytest.approx(dissipation, rel=1e-10)


@pytest.mark.parametrize("bc", BCS)
def test_momentum_advection_of_rest_is_zero(bc):
    grid = Grid2D(8, 8, bc=bc)
    a = grid.momentum_advection(grid.zero_velocity())
    assert a.max_abs() == 0.0


def test_mac_velocity_arithmetic():
    grid = Grid2D(8, 8)
    w = random_velocity(grid, np.random.default_rng(8))
    np.testing.assert_array_equal((w + w).u, (2.0 * w).u)
    np.testing.assert_array_equal((w - w).v, np.zeros_like(w.v))
    assert (w * w).max_abs() == pytest.approx(w.max_abs() ** 2)
    assert w.is_finite()
    w.u[1, 1] = np.nan
    assert not w.is_finite()


def test_neumann_cosine_is_discrete_eigenfunction():
    grid = Grid2D(32, 8, lx=2.0, ly=1.0)
    x, _ = grid.cell_centers()
    f = np.cos(np.pi * x / grid.lx)
    eigenvalue = -(2.0 / grid.hx ** 2) * (1.0 - np.cos(np.pi * grid.hx / grid.lx))
    np.testing.assert_allclose(grid.laplacian(f), eigenvalue * f, atol=1e-10)
    assert eigenvalue == pytest.approx(-(np.pi / grid.lx) ** 2, rel=1e-3)


def test_periodic_laplacian_of_parabola():
    grid = Grid2D(16, 8, bc="periodic")
    x, _ = grid.cell_centers()
    lap = grid.laplacian(x ** 2)
    np.testing.assert_allclose(lap[1:-1, :], 2.0, rtol=1e-9)


@pytest.mark.parametrize("bc", BCS)
def test_gradient_of_linear_field(bc):
    grid = Grid2D(16, 8, bc=bc)
    x, _ = grid.cell_centers()
    g = grid.gradient(3.0 * x)
    np.testing.assert_allclose(g.u[1:-1, :], 3.0, rtol=1e-12)
    assert np.all(g.v == 0.0)


@pytest.mark.parametrize("bc", BCS)
def test_divergence_of_gradient_is_laplacian(bc):
    grid = Grid2D(12, 10, bc=bc)
    f = np.random.default_rng(9).standard_normal(grid.shape)
    np.testing.assert_allclose(grid.divergence(grid.gradient(f)), grid.laplacian(f), atol=1e-10)
    assert np.max(np.abs(grid.divergence(grid.gradient(np.full(grid.shape, 2.0))))) == 0.0


@pytest.mark.parametrize("bc", BCS)
def test_advection_is_conservative(bc):
    grid = Grid2D(12, 12, bc=bc)
    rng = np.random.default_rng(10)
    w = random_velocity(grid, rng)
    f = rng.standard_normal(grid.shape)
    assert grid.integrate(grid.advect_scalar(w, f)) == pytest.approx(0.0, abs=1e-10)
    assert np.max(np.abs(grid.advect_scalar(grid.zero_velocity(), f))) == 0.0


@pytest.mark.parametrize("bc", BCS)
def test_advection_of_constant_by_solenoidal_field(bc):
    grid = Grid2D(16, 16, bc=bc)
    w = random_velocity(grid, np.random.default_rng(11))
    w = grid.enforce_bc(w - grid.gradient(grid.solve_poisson(grid.divergence(w))))
    assert np.max(np.abs(grid.advect_scalar(w, np.full(grid.shape, 1.5)))) <= 1e-9


def test_quadrature():
    grid = Grid2D(64, 64)
    x, y = grid.cell_centers()
    assert grid.integrate(x) == pytest.approx(0.5, abs=1e-14)
    i, j = np.indices(grid.shape)
    assert grid.integrate(np.where((i + j) % 2 == 0, 1.0, -1.0)) == 0.0


def test_interpolation_is_exact_for_linear_fields():
    grid = Grid2D(16, 12)
    x, _ = grid.cell_centers()
    faces = grid.interpolate_to_faces(x)
    xu, _ = grid.u_faces()
    xv, _ = grid.v_faces()
    np.testing.assert_allclose(faces.u[1:-1, :], xu[1:-1, :], rtol=1e-12)
    np.testing.assert_allclose(faces.v, xv, rtol=1e-12)


def test_center_face_round_trip_is_second_order():
    errors = []
    for n in (32, 64):
        grid = Grid2D(n, n, bc="periodic")
        x, y = grid.cell_centers()
        f = np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y)
        ux, vy = grid.faces_to_centers(grid.interpolate_to_faces(f))
        errors.append(max(np.max(np.abs(ux - f)), np.max(np.abs(vy - f))))
    assert 3.5 < errors[0] / errors[1] < 4.5
