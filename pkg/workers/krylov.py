"""
Krylov 求解封装与谱预条件子

所有隐式步都以无矩阵方式调用 scipy.sparse.linalg 的 cg / gmres，
预条件子为常系数算子在 DCT / DST / FFT 基下的精确逆。
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import fft as sfft
from scipy.sparse.linalg import LinearOperator, cg, gmres

import config
from core.errors import StepFailure
from core.grid import Grid2D


logger = logging.getLogger(__name__)


@dataclass
class KrylovResult:
    """一次线性求解的结果与统计"""
    x: np.ndarray
    iterations: int
    residual: float


def _check_result(stage: str, apply: Callable, x: np.ndarray, rhs: np.ndarray,
                  tol: float, iterations: int, info: int) -> KrylovResult:
    if not np.all(np.isfinite(x)):
        raise StepFailure(stage, "解中出现 NaN/Inf", iterations=iterations)
    b_norm = float(np.linalg.norm(rhs))
    r_norm = float(np.linalg.norm(rhs - apply(x)))
    residual = r_norm / b_norm if b_norm > 0 else r_norm
    if info != 0 and residual > 10.0 * tol:
        raise StepFailure(stage, "Krylov 未收敛", residual=residual, iterations=iterations)
    return KrylovResult(x=x, iterations=iterations, residual=residual)


def solve_cg(stage: str, apply: Callable, rhs: np.ndarray, precond: Optional[Callable] = None,
             x0: Optional[np.ndarray] = None, tol: float = config.KRYLOV_TOL,
             maxit: int = config.KRYLOV_MAXIT) -> KrylovResult:
    """
    对称正定系统的预条件共轭梯度

    Args:
        stage: 用于错误信息的阶段名
        apply: x -> A x（一维向量）
        rhs: 右端
        precond: r -> M^{-1} r
        x0: 初值

    Raises:
        StepFailure: 迭代上限内未达到容差或出现 NaN
    """
    if not np.all(np.isfinite(rhs)):
        raise StepFailure(stage, "右端含 NaN/Inf")
    n = rhs.size
    counter = {'it': 0}

    def callback(_xk):
        counter['it'] += 1

    A = LinearOperator((n, n), matvec=apply, dtype=float)
    M = LinearOperator((n, n), matvec=precond, dtype=float) if precond is not None else None
    x, info = cg(A, rhs, x0=x0, rtol=tol, atol=0.0, maxiter=maxit, M=M, callback=callback)
    return _check_result(stage, apply, x, rhs, tol, counter['it'], info)


def solve_gmres(stage: str, apply: Callable, rhs: np.ndarray, precond: Optional[Callable] = None,
                x0: Optional[np.ndarray] = None, tol: float = config.KRYLOV_TOL,
                maxit: int = config.KRYLOV_MAXIT) -> KrylovResult:
    """预条件 GMRES（用于对称不定的块系统）；maxit 计内迭代总数"""
    if not np.all(np.isfinite(rhs)):
        raise StepFailure(stage, "右端含 NaN/Inf")
    n = rhs.size
    restart = min(config.GMRES_RESTART, n)
    counter = {'it': 0}

    def callback(_pr_norm):
        counter['it'] += 1

    A = LinearOperator((n, n), matvec=apply, dtype=float)
    M = LinearOperator((n, n), matvec=precond, dtype=float) if precond is not None else None
    x, info = gmres(A, rhs, x0=x0, rtol=tol, atol=0.0, restart=restart,
                    maxiter=max(1, maxit // restart), M=M,
                    callback=callback, callback_type="pr_norm")
    return _check_result(stage, apply, x, rhs, tol, counter['it'], info)


def helmholtz_inverse(grid: Grid2D, alpha: float, beta: float) -> Callable[[np.ndarray], np.ndarray]:
    """
    标量 (alpha I - beta laplacian)^{-1} 的谱实现

    alpha = 0 时零模式置零（纯 Neumann / 周期泊松）。
    """
    denom = alpha + beta * grid.laplacian_symbol()
    safe = np.where(denom > 0, denom, 1.0)

    def apply(r: np.ndarray) -> np.ndarray:
        rh = grid.spectral_forward(r.reshape(grid.shape))
        xh = np.where(denom > 0, rh / safe, 0.0)
        return grid.spectral_inverse(xh).ravel()

    return apply


def _dirichlet_node_symbol(n: int, h: float) -> np.ndarray:
    k = np.arange(1, n)
    return (2.0 / h ** 2) * (1.0 - np.cos(np.pi * k / n))


def _dirichlet_cell_symbol(n: int, h: float) -> np.ndarray:
    k = np.arange(1, n + 1)
    return (2.0 / h ** 2) * (1.0 - np.cos(np.pi * k / n))


def _periodic_symbol(n: int, h: float) -> np.ndarray:
    k = np.arange(n)
    return (4.0 / h ** 2) * np.sin(np.pi * k / n) ** 2


def velocity_helmholtz_inverse(grid: Grid2D, alpha: float, eta: float) -> Callable[[np.ndarray], np.ndarray]:
    """
    分量形式 (alpha I - eta laplacian)^{-1}，作用于打包后的速度自由度

    无滑移：u 在 x 方向为 Dirichlet 节点（DST-I），y 方向为反射虚单元（DST-II）；v 反之。
    周期：两方向 FFT。
    """
    nx, ny, hx, hy = grid.nx, grid.ny, grid.hx, grid.hy
    workers = config.FFT_WORKERS

    if grid.periodic:
        sym = _periodic_symbol(nx, hx)[:, None] + _periodic_symbol(ny, hy)[None, :]
        denom = alpha + eta * sym
        safe = np.where(denom > 0, denom, 1.0)
        n_u = nx * ny

        def solve_component(r: np.ndarray) -> np.ndarray:
            rh = sfft.fft2(r, workers=workers)
            return np.real(sfft.ifft2(np.where(denom > 0, rh / safe, 0.0), workers=workers))

        def apply(r: np.ndarray) -> np.ndarray:
            ru = r[:n_u].reshape(nx, ny)
            rv = r[n_u:].reshape(nx, ny)
            return np.concatenate([solve_component(ru).ravel(), solve_component(rv).ravel()])

        return apply

    denom_u = alpha + eta * (_dirichlet_node_symbol(nx, hx)[:, None] + _dirichlet_cell_symbol(ny, hy)[None, :])
    denom_v = alpha + eta * (_dirichlet_cell_symbol(nx, hx)[:, None] + _dirichlet_node_symbol(ny, hy)[None, :])
    n_u = (nx - 1) * ny

    def solve_u(r: np.ndarray) -> np.ndarray:
        rh = sfft.dst(sfft.dst(r, type=1, axis=0, norm="ortho", workers=workers),
                      type=2, axis=1, norm="ortho", workers=workers)
        xh = rh / denom_u
        return sfft.idst(sfft.idst(xh, type=2, axis=1, norm="ortho", workers=workers),
                         type=1, axis=0, norm="ortho", workers=workers)

    def solve_v(r: np.ndarray) -> np.ndarray:
        rh = sfft.dst(sfft.dst(r, type=2, axis=0, norm="ortho", workers=workers),
                      type=1, axis=1, norm="ortho", workers=workers)
        xh = rh / denom_v
        return sfft.idst(sfft.idst(xh, type=1, axis=1, norm="ortho", workers=workers),
                         type=2, axis=0, norm="ortho", workers=workers)

    def apply(r: np.ndarray) -> np.ndarray:
        ru = r[:n_u].reshape(nx - 1, ny)
        rv = r[n_u:].reshape(nx, ny - 1)
        return np.concatenate([solve_u(ru).ravel(), solve_v(rv).ravel()])

    return apply
