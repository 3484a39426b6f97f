"""
速度步进（变粘度 + Korteweg 力）与压力恢复

一阶 Chorin 投影：
    (v* - v^n)/dt + div(v^n ⊗ v^n) = div(2 eta(phi+) D v*) + (mu+ + chi sigma+) grad phi+ [+ f]
    lap q+ = div(v*)/dt,  mean(q+) = 0
    v+ = v* - dt grad q+
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

import config
from core.diagnostics import divergence_max
from core.errors import StepFailure
from core.grid import Grid2D, MacVelocity
from core.model import ModelParams, psi_eval
from workers.ch_solver import coefficient_argument
from workers.krylov import solve_cg, velocity_helmholtz_inverse


logger = logging.getLogger(__name__)


@dataclass
class NsStepResult:
    v: MacVelocity
    q: np.ndarray
    iterations: int
    residual: float
    div_max: float


def korteweg_force(grid: Grid2D, mu: np.ndarray, sigma: np.ndarray, phi: np.ndarray, chi: float) -> MacVelocity:
    """面插值的 (mu + chi sigma) 乘以面梯度 grad phi"""
    return grid.interpolate_to_faces(mu + chi * sigma) * grid.gradient(phi)


def project(grid: Grid2D, w: MacVelocity) -> Tuple[MacVelocity, np.ndarray]:
    """
    离散 Helmholtz 投影

    Returns:
        (无散部分, 标量势 psi)，w = proj + grad psi
    """
    psi = grid.solve_poisson(grid.divergence(w))
    return grid.enforce_bc(w - grid.gradient(psi)), psi


def kinetic_energy(grid: Grid2D, w: MacVelocity) -> float:
    return 0.5 * grid.face_inner(w, w)


def ns_step(grid: Grid2D, v_n: MacVelocity, phi_next: np.ndarray, mu_next: np.ndarray,
            sigma_next: np.ndarray, dt: float, p: ModelParams,
            forcing: Optional[MacVelocity] = None,
            krylov_tol: float = config.KRYLOV_TOL,
            krylov_maxit: int = config.KRYLOV_MAXIT,
            poisson_tol: float = config.POISSON_TOL) -> NsStepResult:
    """
    推进速度一步并返回修正压力 q

    Args:
        v_n: 当前速度
        phi_next, mu_next, sigma_next: 本步已更新的标量场
        dt: 时间步长
        p: 模型参数
        forcing: 额外动量源（制造解研究用）

    Raises:
        StepFailure: Krylov 不收敛、NaN 或投影后散度超限
    """
    if not (v_n.is_finite() and np.all(np.isfinite(phi_next)) and np.all(np.isfinite(mu_next))
            and np.all(np.isfinite(sigma_next))):
        raise StepFailure("ns_step", "输入含 NaN/Inf")

    arg = coefficient_argument(phi_next, p.potential.s_max, "ns_step")
    eta = p.viscosity_eta(arg)
    eta_bar = float(np.mean(eta))

    drive = korteweg_force(grid, mu_next, sigma_next, phi_next, p.chi)
    if forcing is not None:
        drive = drive + forcing
    explicit = v_n - grid.momentum_advection(v_n) * dt + drive * dt
    rhs = grid.pack_velocity(grid.enforce_bc(explicit))

    def apply(x: np.ndarray) -> np.ndarray:
        w = grid.unpack_velocity(x)
        return grid.pack_velocity(w - grid.viscous(eta, w) * dt)

    result = solve_cg("ns_step", apply, rhs,
                      precond=velocity_helmholtz_inverse(grid, 1.0, dt * eta_bar),
                      x0=grid.pack_velocity(v_n), tol=krylov_tol, maxit=krylov_maxit)
    v_star = grid.unpack_velocity(result.x)

    q = grid.solve_poisson(grid.divergence(v_star) / dt)
    v_next = grid.enforce_bc(v_star - grid.gradient(q) * dt)

    if not (v_next.is_finite() and np.all(np.isfinite(q))):
        raise StepFailure("ns_step", "结果含 NaN/Inf", residual=result.residual, iterations=result.iterations)

    div_max = divergence_max(grid, v_next)
    bound = config.DIV_REL_TOL * v_next.max_abs() + poisson_tol
    if div_max > bound:
        raise StepFailure("ns_step", f"投影后散度 {div_max:.3e} 超过界 {bound:.3e}",
                          residual=result.residual, iterations=result.iterations)

    logger.debug(f"ns_step: 迭代={result.iterations}, 残差={result.residual:.2e}, max|div v|={div_max:.2e}")
    return NsStepResult(v=v_next, q=q, iterations=result.iterations,
                        residual=result.residual, div_max=div_max)


def _pressure_shift(grid: Grid2D, phi: np.ndarray, p: ModelParams) -> np.ndarray:
    psi, _, _ = psi_eval(phi, p.potential)
    gx, gy = grid.faces_to_centers(grid.gradient(phi))
    return p.A * psi + 0.5 * p.B * (gx ** 2 + gy ** 2)


def recover_physical_pressure(grid: Grid2D, q: np.ndarray, phi: np.ndarray, p: ModelParams) -> np.ndarray:
    """p = q - A Psi(phi) - (B/2)|grad phi|^2，再归一化为零均值"""
    pressure = q - _pressure_shift(grid, phi, p)
    return pressure - np.mean(pressure)


def modified_pressure(grid: Grid2D, pressure: np.ndarray, phi: np.ndarray, p: ModelParams) -> np.ndarray:
    """recover_physical_pressure 的逆：q = p + A Psi(phi) + (B/2)|grad phi|^2，零均值"""
    q = pressure + _pressure_shift(grid, phi, p)
    return q - np.mean(q)
