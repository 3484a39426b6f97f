"""
均匀二维网格与离散算子

标量位于单元中心，形状 (nx, ny)，下标 [i, j] 对应 x_i = (i + 1/2) hx, y_j = (j + 1/2) hy。
速度采用 MAC 交错：u 位于竖直面 (nx+1, ny)，v 位于水平面 (nx, ny+1)。

边界模式：
- neumann: 标量齐次 Neumann（镜像虚单元），速度无滑移（法向面为 0，切向用反射虚单元）
- periodic: 周期；最后一行/列面与第一行/列重复
"""
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import fft as sfft

import config


logger = logging.getLogger(__name__)

BC_MODES = ("neumann", "periodic")


@dataclass
class MacVelocity:
    """交错网格上的面向量场（速度、通量、面梯度）"""
    u: np.ndarray  # (nx+1, ny)
    v: np.ndarray  # (nx, ny+1)

    def copy(self) -> "MacVelocity":
        return MacVelocity(self.u.copy(), self.v.copy())

    def __add__(self, other: "MacVelocity") -> "MacVelocity":
        return MacVelocity(self.u + other.u, self.v + other.v)

    def __sub__(self, other: "MacVelocity") -> "MacVelocity":
        return MacVelocity(self.u - other.u, self.v - other.v)

    def __mul__(self, other) -> "MacVelocity":
        if isinstance(other, MacVelocity):
            return MacVelocity(self.u * other.u, self.v * other.v)
        return MacVelocity(self.u * other, self.v * other)

    __rmul__ = __mul__

    def max_abs(self) -> float:
        return float(max(np.max(np.abs(self.u)), np.max(np.abs(self.v))))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v)))


@dataclass(frozen=True)
class Grid2D:
    """
    均匀矩形网格

    Args:
        nx, ny: 单元数（>= 8）
        lx, ly: 区域尺寸
        bc: 'neumann' 或 'periodic'
    """
    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0
    bc: str = "neumann"

    def __post_init__(self):
        if self.nx < config.GRID_MIN_CELLS or self.ny < config.GRID_MIN_CELLS:
            raise ValueError(f"网格过小: nx={self.nx}, ny={self.ny}（至少 {config.GRID_MIN_CELLS}）")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError(f"区域尺寸必须为正: Lx={self.lx}, Ly={self.ly}")
        if self.bc not in BC_MODES:
            raise ValueError(f"未知边界类型: {self.bc}")

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def periodic(self) -> bool:
        return self.bc == "periodic"

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    # ------------------------------------------------------------------
    # 坐标与构造
    # ------------------------------------------------------------------

    def cell_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def u_faces(self) -> Tuple[np.ndarray, np.ndarray]:
        x = np.arange(self.nx + 1) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def v_faces(self) -> Tuple[np.ndarray, np.ndarray]:
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = np.arange(self.ny + 1) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def zero_velocity(self) -> MacVelocity:
        return MacVelocity(np.zeros((self.nx + 1, self.ny)), np.zeros((self.nx, self.ny + 1)))

    def enforce_bc(self, w: MacVelocity) -> MacVelocity:
        """原地施加面场边界：无滑移法向分量置零，或同步周期重复面"""
        if self.periodic:
            w.u[-1, :] = w.u[0, :]
            w.v[:, -1] = w.v[:, 0]
        else:
            w.u[0, :] = 0.0
            w.u[-1, :] = 0.0
            w.v[:, 0] = 0.0
            w.v[:, -1] = 0.0
        return w

    # ------------------------------------------------------------------
    # 标量算子
    # ------------------------------------------------------------------

    def pad(self, f: np.ndarray) -> np.ndarray:
        """加一层虚单元：周期回绕或镜像（齐次 Neumann）"""
        return np.pad(f, 1, mode="wrap" if self.periodic else "edge")

    def gradient(self, f: np.ndarray) -> MacVelocity:
        """单元中心 -> 面的两点差分梯度；Neumann 边界面法向梯度恰为 0"""
        fp = self.pad(f)
        gx = (fp[1:, 1:-1] - fp[:-1, 1:-1]) / self.hx
        gy = (fp[1:-1, 1:] - fp[1:-1, :-1]) / self.hy
        return MacVelocity(gx, gy)

    def divergence(self, w: MacVelocity) -> np.ndarray:
        """面 -> 单元中心的散度，与 gradient 满足离散分部积分"""
        return (w.u[1:, :] - w.u[:-1, :]) / self.hx + (w.v[:, 1:] - w.v[:, :-1]) / self.hy

    def laplacian(self, f: np.ndarray) -> np.ndarray:
        """五点拉普拉斯，等于 divergence(gradient(f))"""
        return self.divergence(self.gradient(f))

    def interpolate_to_faces(self, f: np.ndarray) -> MacVelocity:
        """单元中心 -> 面的算术平均；常数场精确保持"""
        fp = self.pad(f)
        fu = 0.5 * (fp[1:, 1:-1] + fp[:-1, 1:-1])
        fv = 0.5 * (fp[1:-1, 1:] + fp[1:-1, :-1])
        return MacVelocity(fu, fv)

    def faces_to_centers(self, w: MacVelocity) -> Tuple[np.ndarray, np.ndarray]:
        """面 -> 单元中心的两点平均，返回 (x 分量, y 分量)"""
        return 0.5 * (w.u[1:, :] + w.u[:-1, :]), 0.5 * (w.v[:, 1:] + w.v[:, :-1])

    def div_coeff_grad(self, coeff_faces: MacVelocity, f: np.ndarray) -> np.ndarray:
        """div(c grad f)，c 已给定在面上"""
        return self.divergence(coeff_faces * self.gradient(f))

    def advect_scalar(self, w: MacVelocity, f: np.ndarray) -> np.ndarray:
        """守恒型对流 div(f w)，面值取中心插值"""
        return self.divergence(self.interpolate_to_faces(f) * w)

    def integrate(self, f: np.ndarray) -> float:
        """中点公式 sum f hx hy（numpy 成对求和，顺序固定）"""
        return float(np.sum(f)) * self.cell_area

    def mean(self, f: np.ndarray) -> float:
        return self.integrate(f) / (self.lx * self.ly)

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        return float(np.sum(f * g)) * self.cell_area

    def face_inner(self, a: MacVelocity, b: MacVelocity) -> float:
        """面场内积（周期模式下跳过重复面）"""
        if self.periodic:
            su = np.sum(a.u[:-1, :] * b.u[:-1, :])
            sv = np.sum(a.v[:, :-1] * b.v[:, :-1])
        else:
            su = np.sum(a.u * b.u)
            sv = np.sum(a.v * b.v)
        return float(su + sv) * self.cell_area

    # ------------------------------------------------------------------
    # 速度算子
    # ------------------------------------------------------------------

    def _u_ghost_y(self, u: np.ndarray) -> np.ndarray:
        if self.periodic:
            return np.pad(u, ((0, 0), (1, 1)), mode="wrap")
        return np.concatenate([-u[:, :1], u, -u[:, -1:]], axis=1)

    def _v_ghost_x(self, v: np.ndarray) -> np.ndarray:
        if self.periodic:
            return np.pad(v, ((1, 1), (0, 0)), mode="wrap")
        return np.concatenate([-v[:1, :], v, -v[-1:, :]], axis=0)

    def to_corners(self, c: np.ndarray) -> np.ndarray:
        """单元中心 -> 角点 (nx+1, ny+1) 的四点平均"""
        cp = self.pad(c)
        return 0.25 * (cp[:-1, :-1] + cp[1:, :-1] + cp[:-1, 1:] + cp[1:, 1:])

    def corner_weights(self) -> np.ndarray:
        """角点积分权重：内部 1，壁面 1/2，角 1/4；周期模式重复角点为 0"""
        wx = np.ones(self.nx + 1)
        wy = np.ones(self.ny + 1)
        if self.periodic:
            wx[-1] = 0.0
            wy[-1] = 0.0
        else:
            wx[[0, -1]] = 0.5
            wy[[0, -1]] = 0.5
        return np.outer(wx, wy)

    def strain_parts(self, w: MacVelocity) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """返回 (du/dx 于中心, dv/dy 于中心, du/dy + dv/dx 于角点)"""
        ux = (w.u[1:, :] - w.u[:-1, :]) / self.hx
        vy = (w.v[:, 1:] - w.v[:, :-1]) / self.hy
        ug = self._u_ghost_y(w.u)
        vg = self._v_ghost_x(w.v)
        shear = (ug[:, 1:] - ug[:, :-1]) / self.hy + (vg[1:, :] - vg[:-1, :]) / self.hx
        return ux, vy, shear

    def viscous(self, eta: np.ndarray, w: MacVelocity) -> MacVelocity:
        """
        div(2 eta D w)

        eta 位于单元中心；剪切项中的 eta 取角点四点平均。
        该算子关于 face_inner 对称半负定。
        """
        ux, vy, shear = self.strain_parts(w)
        txx = 2.0 * eta * ux
        tyy = 2.0 * eta * vy
        txy = self.to_corners(eta) * shear
        hx, hy = self.hx, self.hy

        fx = np.zeros_like(w.u)
        fy = np.zeros_like(w.v)
        fx[1:-1, :] = (txx[1:, :] - txx[:-1, :]) / hx + (txy[1:-1, 1:] - txy[1:-1, :-1]) / hy
        fy[:, 1:-1] = (txy[1:, 1:-1] - txy[:-1, 1:-1]) / hx + (tyy[:, 1:] - tyy[:, :-1]) / hy
        if self.periodic:
            fx[0, :] = (txx[0, :] - txx[-1, :]) / hx + (txy[0, 1:] - txy[0, :-1]) / hy
            fy[:, 0] = (txy[1:, 0] - txy[:-1, 0]) / hx + (tyy[:, 0] - tyy[:, -1]) / hy
        return self.enforce_bc(MacVelocity(fx, fy))

    def momentum_advection(self, w: MacVelocity) -> MacVelocity:
        """散度形式的 (w . grad) w = div(w ⊗ w)，中心插值"""
        uc, vc = self.faces_to_centers(w)
        uu = uc * uc
        vv = vc * vc
        ug = self._u_ghost_y(w.u)
        vg = self._v_ghost_x(w.v)
        uv = 0.5 * (ug[:, 1:] + ug[:, :-1]) * 0.5 * (vg[1:, :] + vg[:-1, :])
        hx, hy = self.hx, self.hy

        ax = np.zeros_like(w.u)
        ay = np.zeros_like(w.v)
        ax[1:-1, :] = (uu[1:, :] - uu[:-1, :]) / hx + (uv[1:-1, 1:] - uv[1:-1, :-1]) / hy
        ay[:, 1:-1] = (uv[1:, 1:-1] - uv[:-1, 1:-1]) / hx + (vv[:, 1:] - vv[:, :-1]) / hy
        if self.periodic:
            ax[0, :] = (uu[0, :] - uu[-1, :]) / hx + (uv[0, 1:] - uv[0, :-1]) / hy
            ay[:, 0] = (uv[1:, 0] - uv[:-1, 0]) / hx + (vv[:, 0] - vv[:, -1]) / hy
        return self.enforce_bc(MacVelocity(ax, ay))

    # 速度自由度打包（供 Krylov 使用）

    def _u_free(self) -> slice:
        return slice(0, self.nx) if self.periodic else slice(1, self.nx)

    def _v_free(self) -> slice:
        return slice(0, self.ny) if self.periodic else slice(1, self.ny)

    def pack_velocity(self, w: MacVelocity) -> np.ndarray:
        return np.concatenate([w.u[self._u_free(), :].ravel(), w.v[:, self._v_free()].ravel()])

    def unpack_velocity(self, x: np.ndarray) -> MacVelocity:
        w = self.zero_velocity()
        su, sv = self._u_free(), self._v_free()
        n_u = w.u[su, :].size
        w.u[su, :] = x[:n_u].reshape(w.u[su, :].shape)
        w.v[:, sv] = x[n_u:].reshape(w.v[:, sv].shape)
        return self.enforce_bc(w)

    # ------------------------------------------------------------------
    # 谱变换（Neumann: DCT-II；周期: FFT）
    # ------------------------------------------------------------------

    def laplacian_symbol(self) -> np.ndarray:
        """-laplacian 在变换基下的特征值（非负），形状 (nx, ny)"""
        kx = np.arange(self.nx)
        ky = np.arange(self.ny)
        if self.periodic:
            lx = (4.0 / self.hx ** 2) * np.sin(np.pi * kx / self.nx) ** 2
            ly = (4.0 / self.hy ** 2) * np.sin(np.pi * ky / self.ny) ** 2
        else:
            lx = (2.0 / self.hx ** 2) * (1.0 - np.cos(np.pi * kx / self.nx))
            ly = (2.0 / self.hy ** 2) * (1.0 - np.cos(np.pi * ky / self.ny))
        return lx[:, None] + ly[None, :]

    def spectral_forward(self, f: np.ndarray) -> np.ndarray:
        if self.periodic:
            return sfft.fft2(f, workers=config.FFT_WORKERS)
        return sfft.dctn(f, type=2, norm="ortho", workers=config.FFT_WORKERS)

    def spectral_inverse(self, fh: np.ndarray) -> np.ndarray:
        if self.periodic:
            return np.real(sfft.ifft2(fh, workers=config.FFT_WORKERS))
        return sfft.idctn(fh, type=2, norm="ortho", workers=config.FFT_WORKERS)

    def solve_poisson(self, rhs: np.ndarray) -> np.ndarray:
        """
        求解 laplacian(q) = rhs，返回均值为 0 的解

        rhs 的均值（相容性残差）被投影掉。
        """
        symbol = self.laplacian_symbol()
        rh = self.spectral_forward(rhs - np.mean(rhs))
        qh = np.zeros_like(rh)
        mask = symbol > 0
        qh[mask] = -rh[mask] / symbol[mask]
        q = self.spectral_inverse(qh)
        return q - np.mean(q)
