import numpy as np
import pytest

from core.errors import StepFailure
from core.grid import Grid2D
from workers.krylov import helmholtz_inverse, solve_cg, solve_gmres, velocity_helmholtz_inverse


BCS = ["neumann", "periodic"]


def spd_matrix(n: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((n, n))
    return q @ q.T + n * np.eye(n)


def test_cg_solves_spd_system():
    M = spd_matrix(30)
    b = np.arange(30, dtype=float)
    result = solve_cg("test", lambda x: M @ x, b, tol=1e-12)
    np.testing.assert_allclose(result.x, np.linalg.solve(M, b), rtol=1e-9)
    assert result.residual <= 1e-11
    assert result.iterations > 0


def test_gmres_solves_nonsymmetric_system():
    rng = np.random.default_rng(1)
    M = 10 * np.eye(40) + rng.standard_normal((40, 40))
    b = rng.standard_normal(40)
    result = solve_gmres("test", lambda x: M @ x, b, tol=1e-12)
    np.testing.assert_allclose(result.x, np.linalg.solve(M, b), rtol=1e-8)


def test_exact_preconditioner_converges_immediately():
    M = spd_matrix(20, seed=2)
    inv = np.linalg.inv(M)
    result = solve_cg("test", lambda x: M @ x, np.ones(20), precond=lambda r: inv @ r, tol=1e-12)
    assert result.iterations <= 2


def test_non_convergence_raises_step_failure():
    M = np.diag(np.logspace(0, 8, 200))
    with pytest.raises(StepFailure) as err:
        solve_cg("stiff", lambda x: M @ x, np.ones(200), tol=1e-14, maxit=2)
    assert err.value.stage == "stiff"
    assert err.value.iterations == 2


def test_nan_right_hand_side_raises():
    with pytest.raises(StepFailure):
        solve_cg("nan", lambda x: x, np.array([1.0, np.nan]))


@pytest.mark.parametrize("bc", BCS)
def test_helmholtz_inverse(bc):
    grid = Grid2D(16, 8, lx=1.0, ly=0.5, bc=bc)
    f = np.random.default_rng(3).standard_normal(grid.shape)
    rhs = 2.0 * f - 0.3 * grid.laplacian(f)
    np.testing.assert_allclose(helmholtz_inverse(grid, 2.0, 0.3)(rhs.ravel()), f.ravel(), atol=1e-10)


@pytest.mark.parametrize("bc", BCS)
def test_velocity_helmholtz_inverse(bc):
    # 常粘度下 div(2 D w) = 分量拉普拉斯 + grad(div w)
    grid = Grid2D(12, 8, lx=1.5, ly=1.0, bc=bc)
    rng = np.random.default_rng(4)
    x = rng.standard_normal(grid.pack_velocity(grid.zero_velocity()).size)
    w = grid.unpack_velocity(x)
    componentwise = grid.viscous(np.ones(grid.shape), w) - grid.gradient(grid.divergence(w))
    y = grid.pack_velocity(w - componentwise * 0.2)
    np.testing.assert_allclose(velocity_helmholtz_inverse(grid, 1.0, 0.2)(y), x, atol=1e-10)
