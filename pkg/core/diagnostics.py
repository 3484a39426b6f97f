"""
诊断 - 总能量、离散能量恒等式残差、质量平衡与求解健康状态

能量：
    E = ∫ 1/2|v|^2 + A Psi(phi) + (B/2)|grad phi|^2 + 1/2 sigma^2 + chi sigma (1 - phi)
恒等式残差：
    (E+ - E^n)/dt + D_mu + D_sigma + D_visc - W_sources
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Protocol, Tuple

import numpy as np

from core.grid import Grid2D, MacVelocity
from core.model import ModelParams, chemical_free_energy, psi_eval


logger = logging.getLogger(__name__)


class FieldState(Protocol):
    """诊断所需的最小状态接口"""
    t: float
    phi: np.ndarray
    sigma: np.ndarray
    v: MacVelocity


@dataclass
class EnergyReport:
    """一步的能量分解；耗散与源功率在只有能量部分时为 0"""
    t: float
    E_total: float
    E_kinetic: float
    E_ginzburg_landau: float
    E_chemical: float
    D_mu: float = 0.0
    D_sigma: float = 0.0
    D_visc: float = 0.0
    W_sources: float = 0.0
    imbalance: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Dissipation:
    D_mu: float
    D_sigma: float
    D_visc: float

    @property
    def total(self) -> float:
        return self.D_mu + self.D_sigma + self.D_visc


@dataclass
class HealthReport:
    """单步健康状态，驱动步长控制与中止逻辑"""
    finite: bool
    cfl_margin: float  # dt / dt_cfl，<= 1 表示满足 CFL
    div_max: float
    phi_max_abs: float
    krylov_iterations: Dict[str, int] = field(default_factory=dict)
    div_ok: bool = True
    warnings: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.finite and self.div_ok and self.cfl_margin <= 1.0

    def to_dict(self) -> dict:
        return asdict(self)


def total_energy(grid: Grid2D, state: FieldState, p: ModelParams) -> EnergyReport:
    """能量各项（梯度项取面差分，与离散拉普拉斯一致）"""
    psi, _, _ = psi_eval(state.phi, p.potential)
    grad_phi = grid.gradient(state.phi)
    n_val, _, _ = chemical_free_energy(state.phi, state.sigma, p.chi)

    e_kin = 0.5 * grid.face_inner(state.v, state.v)
    e_gl = p.A * grid.integrate(psi) + 0.5 * p.B * grid.face_inner(grad_phi, grad_phi)
    e_chem = grid.integrate(n_val)
    return EnergyReport(t=state.t, E_total=e_kin + e_gl + e_chem,
                        E_kinetic=e_kin, E_ginzburg_landau=e_gl, E_chemical=e_chem)


def viscous_dissipation(grid: Grid2D, eta: np.ndarray, v: MacVelocity) -> float:
    """∫ 2 eta |D v|^2，剪切项在角点按 corner_weights 加权"""
    ux, vy, shear = grid.strain_parts(v)
    eta = np.broadcast_to(eta, grid.shape)
    normal = np.sum(2.0 * eta * (ux ** 2 + vy ** 2))
    cross = np.sum(grid.corner_weights() * grid.to_corners(eta) * shear ** 2)
    return float(normal + cross) * grid.cell_area


def dissipation_terms(grid: Grid2D, phi_n: np.ndarray, phi_next: np.ndarray, mu_next: np.ndarray,
                      sigma_next: np.ndarray, v_next: MacVelocity, p: ModelParams,
                      mobility_faces: Optional[MacVelocity] = None,
                      diffusivity_faces: Optional[MacVelocity] = None) -> Dissipation:
    """
    一步的耗散率

    D_mu 的迁移率取 m(phi^n)（与 ch_step 冻结的系数一致），
    D_sigma 取 n(phi+) 与 grad(sigma+) - chi grad(phi+)，D_visc 取 eta(phi+)。
    """
    s_max = p.potential.s_max
    if mobility_faces is None:
        mobility_faces = grid.interpolate_to_faces(p.mobility_m(np.clip(phi_n, -s_max, s_max)))
    arg_next = np.clip(phi_next, -s_max, s_max)
    if diffusivity_faces is None:
        diffusivity_faces = grid.interpolate_to_faces(p.mobility_n(arg_next))

    grad_mu = grid.gradient(mu_next)
    g = grid.gradient(sigma_next) - grid.gradient(phi_next) * p.chi
    return Dissipation(
        D_mu=grid.face_inner(mobility_faces * grad_mu, grad_mu),
        D_sigma=grid.face_inner(diffusivity_faces * g, g),
        D_visc=viscous_dissipation(grid, p.viscosity_eta(arg_next), v_next),
    )


def source_work(grid: Grid2D, phi_next: np.ndarray, mu_next: np.ndarray, sigma_next: np.ndarray,
                gamma: np.ndarray, s: np.ndarray, p: ModelParams) -> float:
    """W = ∫ (sigma + chi(1 - phi)) S + mu Gamma"""
    _, _, n_sigma = chemical_free_energy(phi_next, sigma_next, p.chi)
    return grid.integrate(n_sigma * s + mu_next * gamma)


def energy_balance_residual(report_n: EnergyReport, report_next: EnergyReport, dissipations: Dissipation,
                            w_sources: float, dt: float) -> float:
    return ((report_next.E_total - report_n.E_total) / dt
            + dissipations.D_mu + dissipations.D_sigma + dissipations.D_visc - w_sources)


def mass_balance(grid: Grid2D, state_n: FieldState, state_next: FieldState,
                 gamma: np.ndarray, s: np.ndarray, dt: float) -> Tuple[float, float]:
    """
    离散质量平衡残差

    Returns:
        ((mean phi+ - mean phi^n)/dt - mean Gamma, sigma 同理)
    """
    phi_res = (grid.mean(state_next.phi) - grid.mean(state_n.phi)) / dt - grid.mean(gamma)
    sigma_res = (grid.mean(state_next.sigma) - grid.mean(state_n.sigma)) / dt - grid.mean(s)
    return phi_res, sigma_res


def divergence_max(grid: Grid2D, v: MacVelocity) -> float:
    return float(np.max(np.abs(grid.divergence(v))))


def advective_dt_bound(grid: Grid2D, v: MacVelocity, safety: float) -> float:
    """safety * min(h) / max|v|；静止时为 inf"""
    speed = v.max_abs()
    if speed == 0.0:
        return float("inf")
    return safety * min(grid.hx, grid.hy) / speed


def health(grid: Grid2D, state: FieldState, dt: float, cfl_safety: float,
           krylov_iterations: Optional[Dict[str, int]] = None, s_max: Optional[float] = None,
           div_limit: Optional[float] = None) -> HealthReport:
    """
    步后健康检查

    Args:
        dt: 刚完成（或即将使用）的步长
        div_limit: 允许的 max|div v|；None 表示不检查
    """
    finite = bool(np.all(np.isfinite(state.phi)) and np.all(np.isfinite(state.sigma)) and state.v.is_finite())
    bound = advective_dt_bound(grid, state.v, cfl_safety) if finite else 0.0
    report = HealthReport(
        finite=finite,
        cfl_margin=dt / bound if bound > 0 else float("inf"),
        div_max=divergence_max(grid, state.v) if finite else float("nan"),
        phi_max_abs=float(np.max(np.abs(state.phi))) if finite else float("nan"),
        krylov_iterations=dict(krylov_iterations or {}),
    )
    if not finite:
        report.warnings.append("状态含 NaN/Inf")
    if div_limit is not None and finite and report.div_max > div_limit:
        report.div_ok = False
        report.warnings.append(f"散度超限: max|div v| = {report.div_max:.3e} > {div_limit:.3e}")
    if report.cfl_margin > 1.0:
        report.warnings.append(f"CFL 裕度不足: dt/dt_cfl = {report.cfl_margin:.3f}")
    if s_max is not None and report.phi_max_abs > s_max:
        report.warnings.append(f"|phi|_inf = {report.phi_max_abs:.4f} 超出工作区间 {s_max}")
    return report
