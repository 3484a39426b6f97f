"""
营养物（化学物质密度 sigma）步进与通量分解

    (sigma+ - sigma^n)/dt + div(sigma^n v^n)
        = div(n(phi+) grad sigma+) - chi div(n(phi+) grad phi+) + S^n

扩散隐式（CG + DCT 预条件），交叉扩散用刚算出的 phi+ 显式处理，
因此隐式算子保持对称正定。
"""
import logging
from dataclasses import dataclass

import numpy as np

import config
from core.errors import StepFailure
from core.grid import Grid2D, MacVelocity
from core.model import ModelParams
from workers.ch_solver import coefficient_argument
from workers.krylov import helmholtz_inverse, solve_cg


logger = logging.getLogger(__name__)


@dataclass
class SigmaStepResult:
    sigma: np.ndarray
    diffusivity_faces: MacVelocity  # n(phi+) 的面值
    iterations: int
    residual: float


@dataclass
class FluxDecomposition:
    """phi 与 sigma 通量按输运机制的分解（均为面场）"""
    q_phi_diffusive: MacVelocity
    q_phi_chemotactic: MacVelocity
    q_sigma_diffusive: MacVelocity
    q_sigma_active: MacVelocity

    @property
    def q_phi(self) -> MacVelocity:
        return self.q_phi_diffusive + self.q_phi_chemotactic

    @property
    def q_sigma(self) -> MacVelocity:
        return self.q_sigma_diffusive + self.q_sigma_active


def sigma_step(grid: Grid2D, sigma_n: np.ndarray, phi_next: np.ndarray, v_n: MacVelocity,
               s_n: np.ndarray, dt: float, p: ModelParams,
               krylov_tol: float = config.KRYLOV_TOL,
               krylov_maxit: int = config.KRYLOV_MAXIT) -> SigmaStepResult:
    """
    推进 sigma 一步

    Args:
        sigma_n: 当前 sigma
        phi_next: ch_step 刚算出的 phi+
        v_n: 当前速度
        s_n: 反应源项
        dt: 时间步长
        p: 模型参数

    Raises:
        StepFailure: Krylov 不收敛或出现 NaN
    """
    if not (np.all(np.isfinite(sigma_n)) and np.all(np.isfinite(phi_next)) and np.all(np.isfinite(s_n))):
        raise StepFailure("sigma_step", "输入含 NaN/Inf")

    arg = coefficient_argument(phi_next, p.potential.s_max, "sigma_step")
    n_cells = p.mobility_n(arg)
    diff = grid.interpolate_to_faces(n_cells)
    n_bar = float(np.mean(n_cells))

    rhs = (sigma_n
           - dt * grid.advect_scalar(v_n, sigma_n)
           - dt * p.chi * grid.div_coeff_grad(diff, phi_next)
           + dt * s_n).ravel()

    def apply(x: np.ndarray) -> np.ndarray:
        f = x.reshape(grid.shape)
        return (f - dt * grid.div_coeff_grad(diff, f)).ravel()

    result = solve_cg("sigma_step", apply, rhs,
                      precond=helmholtz_inverse(grid, 1.0, dt * n_bar),
                      x0=sigma_n.ravel().copy(), tol=krylov_tol, maxit=krylov_maxit)

    sigma = result.x.reshape(grid.shape).copy()
    sigma += (float(np.sum(rhs)) - float(np.sum(sigma))) / sigma.size

    if not np.all(np.isfinite(sigma)):
        raise StepFailure("sigma_step", "结果含 NaN/Inf", residual=result.residual, iterations=result.iterations)

    logger.debug(f"sigma_step: 迭代={result.iterations}, 残差={result.residual:.2e}")
    return SigmaStepResult(sigma=sigma, diffusivity_faces=diff,
                           iterations=result.iterations, residual=result.residual)


def flux_decomposition(grid: Grid2D, phi: np.ndarray, mu: np.ndarray, sigma: np.ndarray,
                       p: ModelParams) -> FluxDecomposition:
    """
    通量分解

    q_phi = -m grad mu = -m grad(mu + chi sigma) [扩散] + m chi grad sigma [趋化]
    q_sigma = -n grad N_sigma = -n grad sigma [扩散] + n chi grad phi [主动输运]

    两部分之和按构造等于总通量。
    """
    arg = np.clip(phi, -p.potential.s_max, p.potential.s_max)
    m_f = grid.interpolate_to_faces(p.mobility_m(arg))
    n_f = grid.interpolate_to_faces(p.mobility_n(arg))
    grad_sigma = grid.gradient(sigma)
    grad_phi = grid.gradient(phi)
    return FluxDecomposition(
        q_phi_diffusive=m_f * grid.gradient(mu + p.chi * sigma) * -1.0,
        q_phi_chemotactic=m_f * grad_sigma * p.chi,
        q_sigma_diffusive=n_f * grad_sigma * -1.0,
        q_sigma_active=n_f * grad_phi * p.chi,
    )
