"""
Cahn-Hilliard 步进（phi, mu）

线性隐式稳定化格式：
    (phi+ - phi^n)/dt + div(phi^n v^n) = div(m(phi^n) grad mu+) + Gamma^n
    mu+ = A [Psi'(phi^n) + S (phi+ - phi^n)] - B lap phi+ - chi sigma^n

写成对称块系统 [[-H, I], [I, dt K]] [phi; mu] = [r_mu; dt r_phi]，
其中 H = A S - B lap，K = -div(m grad .)，用 GMRES 求解，
预条件子为常迁移率 (m 取均值) 块算子在谱空间的精确逆。
"""
import logging
from dataclasses import dataclass

import numpy as np

import config
from core.errors import StepFailure
from core.grid import Grid2D, MacVelocity
from core.model import ModelParams, psi_eval
from workers.krylov import solve_gmres


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChStepConfig:
    """单步配置"""
    dt: float
    stabilization: float
    krylov_tol: float = config.KRYLOV_TOL
    krylov_maxit: int = config.KRYLOV_MAXIT

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt 必须为正: {self.dt}")


@dataclass
class ChStepResult:
    phi: np.ndarray
    mu: np.ndarray
    mobility_faces: MacVelocity  # m(phi^n) 的面值，能量审计复用
    iterations: int
    residual: float


def coefficient_argument(phi: np.ndarray, s_max: float, stage: str) -> np.ndarray:
    """系数函数的自变量：超出工作区间时告警并截断（只截断自变量，不改场）"""
    peak = float(np.max(np.abs(phi)))
    if peak > s_max:
        logger.warning(f"[{stage}] |phi|_inf = {peak:.4f} 超出工作区间 {s_max}，系数自变量已截断")
        return np.clip(phi, -s_max, s_max)
    return phi


def chemical_potential(grid: Grid2D, phi: np.ndarray, sigma: np.ndarray, p: ModelParams) -> np.ndarray:
    """mu = A Psi'(phi) - B lap phi - chi sigma（离散拉普拉斯）"""
    _, dpsi, _ = psi_eval(phi, p.potential)
    return p.A * dpsi - p.B * grid.laplacian(phi) - p.chi * sigma


def _block_operator(grid: Grid2D, mob: MacVelocity, a_stab: float, b: float, dt: float):
    n = grid.nx * grid.ny

    def apply(x: np.ndarray) -> np.ndarray:
        phi = x[:n].reshape(grid.shape)
        mu = x[n:].reshape(grid.shape)
        row_mu = -(a_stab * phi - b * grid.laplacian(phi)) + mu
        row_phi = phi - dt * grid.div_coeff_grad(mob, mu)
        return np.concatenate([row_mu.ravel(), row_phi.ravel()])

    return apply


def _block_preconditioner(grid: Grid2D, m_bar: float, a_stab: float, b: float, dt: float):
    lam = grid.laplacian_symbol()
    h = a_stab + b * lam
    kappa = dt * m_bar * lam
    det = -h * kappa - 1.0
    n = grid.nx * grid.ny

    def apply(r: np.ndarray) -> np.ndarray:
        a_hat = grid.spectral_forward(r[:n].reshape(grid.shape))
        b_hat = grid.spectral_forward(r[n:].reshape(grid.shape))
        phi_hat = (kappa * a_hat - b_hat) / det
        mu_hat = (-a_hat - h * b_hat) / det
        return np.concatenate([grid.spectral_inverse(phi_hat).ravel(),
                               grid.spectral_inverse(mu_hat).ravel()])

    return apply


def assemble_ch_rhs(grid: Grid2D, phi_n: np.ndarray, sigma_n: np.ndarray, v_n: MacVelocity,
                    gamma_n: np.ndarray, cfg: ChStepConfig, p: ModelParams) -> np.ndarray:
    """块系统右端 [r_mu; dt r_phi]"""
    _, dpsi, _ = psi_eval(phi_n, p.potential)
    r_mu = p.A * (dpsi - cfg.stabilization * phi_n) - p.chi * sigma_n
    r_phi = phi_n - cfg.dt * grid.advect_scalar(v_n, phi_n) + cfg.dt * gamma_n
    return np.concatenate([r_mu.ravel(), r_phi.ravel()])


def ch_step(grid: Grid2D, phi_n: np.ndarray, sigma_n: np.ndarray, v_n: MacVelocity,
            gamma_n: np.ndarray, cfg: ChStepConfig, p: ModelParams) -> ChStepResult:
    """
    推进 (phi, mu) 一步

    Args:
        grid: 网格
        phi_n, sigma_n: 当前场
        v_n: 当前速度（显式对流）
        gamma_n: 质量转移源项
        cfg: 步长与求解器配置
        p: 模型参数

    Returns:
        ChStepResult

    Raises:
        StepFailure: Krylov 不收敛或出现 NaN
    """
    if not (np.all(np.isfinite(phi_n)) and np.all(np.isfinite(sigma_n)) and np.all(np.isfinite(gamma_n))):
        raise StepFailure("ch_step", "输入含 NaN/Inf")

    arg = coefficient_argument(phi_n, p.potential.s_max, "ch_step")
    mob = grid.interpolate_to_faces(p.mobility_m(arg))
    m_bar = float(np.mean(p.mobility_m(arg)))
    a_stab = p.A * cfg.stabilization
    n = grid.nx * grid.ny

    rhs = assemble_ch_rhs(grid, phi_n, sigma_n, v_n, gamma_n, cfg, p)
    x0 = np.concatenate([phi_n.ravel(), chemical_potential(grid, phi_n, sigma_n, p).ravel()])
    result = solve_gmres(
        "ch_step",
        _block_operator(grid, mob, a_stab, p.B, cfg.dt),
        rhs,
        precond=_block_preconditioner(grid, m_bar, a_stab, p.B, cfg.dt),
        x0=x0,
        tol=cfg.krylov_tol,
        maxit=cfg.krylov_maxit,
    )

    phi = result.x[:n].reshape(grid.shape).copy()
    mu = result.x[n:].reshape(grid.shape).copy()

    # 常数平移使离散质量平衡精确成立（K 零化常数，H 对常数为 A S）
    shift = (float(np.sum(rhs[n:])) - float(np.sum(phi))) / n
    phi += shift
    mu += a_stab * shift

    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(mu))):
        raise StepFailure("ch_step", "结果含 NaN/Inf", residual=result.residual, iterations=result.iterations)

    logger.debug(f"ch_step: 迭代={result.iterations}, 残差={result.residual:.2e}, 质量修正={shift:.2e}")
    return ChStepResult(phi=phi, mu=mu, mobility_faces=mob,
                        iterations=result.iterations, residual=result.residual)
