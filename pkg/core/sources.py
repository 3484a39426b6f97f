"""
质量转移 Gamma 与反应项 S

预设（已吸收 phi 方程中的因子 2）：
- proliferation:     Gamma = (G sigma - Ap)(phi + 1),  S = -1/2 C sigma (phi + 1)
- lipschitz-growth:  Gamma = h(phi) P(sigma),          S = -h(phi) C sigma
  h(s) = clip((s + 1)/2, 0, 1),  P(sigma) = G clip(sigma, 0, growth_cap)
- prescribed:        从快照格式的 Gamma_*.csv / S_*.csv 读取，按时间线性插值
"""
import glob
import logging
import os
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np

from core.errors import SourceError
from core.grid import Grid2D
from core.io import read_snapshot


logger = logging.getLogger(__name__)

SOURCE_KINDS = ("zero", "prescribed", "proliferation", "lipschitz-growth")


@dataclass(frozen=True)
class SourceSpec:
    """
    源项规格

    Args:
        kind: zero / prescribed / proliferation / lipschitz-growth
        proliferation: 增殖率 G
        apoptosis: 凋亡率 Ap
        consumption: 消耗率 C
        growth_cap: lipschitz-growth 中 P 的饱和浓度
        path: prescribed 模式的目录
    """
    kind: str = "zero"
    proliferation: float = 0.0
    apoptosis: float = 0.0
    consumption: float = 0.0
    growth_cap: float = 1.0
    path: str = ""

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise ValueError(f"未知源项类型: {self.kind}（可选 {', '.join(SOURCE_KINDS)}）")
        for name in ("proliferation", "apoptosis", "consumption", "growth_cap"):
            if getattr(self, name) < 0:
                raise ValueError(f"sources.{name} 必须非负: {getattr(self, name)}")
        if self.kind == "prescribed" and not self.path:
            raise ValueError("prescribed 源项需要 sources.path")

    @property
    def is_state_dependent(self) -> bool:
        """预设源项依赖于解本身，超出存在性定理对给定源项的假设"""
        return self.kind in ("proliferation", "lipschitz-growth")


def interface_indicator(phi: np.ndarray) -> np.ndarray:
    """h(s) = clip((s + 1)/2, 0, 1)"""
    return np.clip(0.5 * (phi + 1.0), 0.0, 1.0)


def growth_ramp(sigma: np.ndarray, spec: SourceSpec) -> np.ndarray:
    return spec.proliferation * np.clip(sigma, 0.0, spec.growth_cap)


@dataclass
class PrescribedFrames:
    """按时间排序的源项帧"""
    times: np.ndarray
    gamma: np.ndarray  # (n_frames, nx, ny)
    s: np.ndarray

    def at(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        """线性插值，区间外取端点帧"""
        if len(self.times) == 1 or t <= self.times[0]:
            return self.gamma[0].copy(), self.s[0].copy()
        if t >= self.times[-1]:
            return self.gamma[-1].copy(), self.s[-1].copy()
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        w = (t - self.times[k]) / (self.times[k + 1] - self.times[k])
        return ((1.0 - w) * self.gamma[k] + w * self.gamma[k + 1],
                (1.0 - w) * self.s[k] + w * self.s[k + 1])


def _read_stack(directory: str, field: str):
    paths = sorted(glob.glob(os.path.join(directory, f"{field}_*.csv")))
    if not paths:
        raise SourceError(f"目录 {directory} 中没有 {field}_*.csv")
    try:
        frames = [read_snapshot(path) for path in paths]
    except ValueError as e:
        raise SourceError(str(e)) from e
    frames.sort(key=lambda snap: snap.t)
    return np.array([snap.t for snap in frames]), np.stack([snap.values for snap in frames])


@lru_cache(maxsize=8)
def load_prescribed(directory: str) -> PrescribedFrames:
    """读取并缓存 prescribed 源项目录"""
    t_gamma, gamma = _read_stack(directory, "Gamma")
    t_s, s = _read_stack(directory, "S")
    if t_gamma.shape != t_s.shape or not np.allclose(t_gamma, t_s):
        raise SourceError(f"Gamma 与 S 的帧时间不一致: {t_gamma} vs {t_s}")
    if gamma.shape != s.shape:
        raise SourceError(f"Gamma 与 S 的形状不一致: {gamma.shape} vs {s.shape}")
    if not (np.all(np.isfinite(gamma)) and np.all(np.isfinite(s))):
        raise SourceError(f"{directory} 中的源项含 NaN/Inf")
    logger.info(f"已加载给定源项: {len(t_gamma)} 帧, t ∈ [{t_gamma[0]:g}, {t_gamma[-1]:g}]")
    return PrescribedFrames(times=t_gamma, gamma=gamma, s=s)


def eval_sources(grid: Grid2D, phi: np.ndarray, sigma: np.ndarray, t: float,
                 spec: SourceSpec) -> Tuple[np.ndarray, np.ndarray]:
    """
    计算 (Gamma, S)

    Raises:
        SourceError: 输入含 NaN，或给定源项形状与网格不符
    """
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(sigma))):
        raise SourceError("源项输入含 NaN/Inf")

    if spec.kind == "zero":
        return np.zeros(grid.shape), np.zeros(grid.shape)

    if spec.kind == "proliferation":
        gamma = (spec.proliferation * sigma - spec.apoptosis) * (phi + 1.0)
        s = -0.5 * spec.consumption * sigma * (phi + 1.0)
        return gamma, s

    if spec.kind == "lipschitz-growth":
        h = interface_indicator(phi)
        return h * growth_ramp(sigma, spec), -h * spec.consumption * sigma

    frames = load_prescribed(spec.path)
    if frames.gamma.shape[1:] != grid.shape:
        raise SourceError(f"给定源项形状 {frames.gamma.shape[1:]} 与网格 {grid.shape} 不符")
    return frames.at(t)


def lipschitz_bound(spec: SourceSpec, phi_bound: float, sigma_bound: float) -> Tuple[float, float]:
    """
    源项在 |phi| <= phi_bound, |sigma| <= sigma_bound 上关于 (|dphi| + |dsigma|) 的解析 Lipschitz 常数

    Returns:
        (L_Gamma, L_S)
    """
    g, ap, c = spec.proliferation, spec.apoptosis, spec.consumption
    if spec.kind == "proliferation":
        l_gamma = max(g * sigma_bound + ap, g * (phi_bound + 1.0))
        l_s = max(0.5 * c * sigma_bound, 0.5 * c * (phi_bound + 1.0))
        return l_gamma, l_s
    if spec.kind == "lipschitz-growth":
        l_gamma = max(0.5 * g * min(sigma_bound, spec.growth_cap), g)
        l_s = max(0.5 * c * sigma_bound, c)
        return l_gamma, l_s
    return 0.0, 0.0
