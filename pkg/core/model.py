"""
物理模型 - 参数、双阱势、化学自由能与系数函数

包含：
- PotentialSpec: 势函数 Psi 及其增长常数 (C0..C4, r) 与稳定化上界
- CoeffSpec: 迁移率 m、n 与粘度 eta（多项式求值后截断到 [lower, upper]）
- ModelParams: A、B、chi 与以上规格的组合
- validate_params: 对结构性假设做稠密采样校验
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Tuple, Union

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

import config


logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

QUARTIC_COEFFICIENTS = (0.25, 0.0, -0.5, 0.0, 0.25)


@dataclass(frozen=True)
class PotentialSpec:
    """
    双阱势规格

    kind 为 'quartic' 时 Psi(s) = 1/4 (s^2 - 1)^2；为 'polynomial' 时按升幂系数求值。
    """
    kind: str = "quartic"
    coefficients: Tuple[float, ...] = QUARTIC_COEFFICIENTS
    C0: float = config.QUARTIC_C0
    C1: float = config.QUARTIC_C1
    C2: float = config.QUARTIC_C2
    C3: float = config.QUARTIC_C3
    C4: float = config.QUARTIC_C4
    r: float = config.QUARTIC_R
    s_max: float = config.POTENTIAL_S_MAX
    stabilization: float = config.QUARTIC_STABILIZATION

    def __post_init__(self):
        if self.kind not in ("quartic", "polynomial"):
            raise ValueError(f"未知势函数类型: {self.kind}")
        if self.kind == "quartic":
            object.__setattr__(self, "coefficients", QUARTIC_COEFFICIENTS)
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))

    @property
    def growth_constants(self) -> Tuple[float, float, float, float, float, float]:
        return (self.C0, self.C1, self.C2, self.C3, self.C4, self.r)


@dataclass(frozen=True)
class CoeffSpec:
    """
    系数函数规格（m、n 或 eta）

    多项式按升幂系数求值后截断到 [lower_bound, upper_bound]，
    因此上下界对任意自变量都成立。
    """
    kind: str = "constant"
    lower_bound: float = 1.0
    upper_bound: float = 1.0
    coefficients: Tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if self.kind not in ("constant", "polynomial"):
            raise ValueError(f"未知系数类型: {self.kind}")
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))

    @classmethod
    def constant(cls, value: float) -> "CoeffSpec":
        return cls(kind="constant", lower_bound=value, upper_bound=value, coefficients=(value,))

    def __call__(self, s: ArrayLike) -> ArrayLike:
        s = np.asarray(s, dtype=float)
        if self.kind == "constant":
            raw = np.full_like(s, self.coefficients[0] if self.coefficients else self.lower_bound)
        else:
            raw = P.polyval(s, self.coefficients)
        return np.clip(raw, self.lower_bound, self.upper_bound)

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant" or self.lower_bound == self.upper_bound


@dataclass(frozen=True)
class ModelParams:
    """模型参数（构造后不可变，可跨线程共享）"""
    A: float = config.PARAM_A
    B: float = config.PARAM_B
    chi: float = config.PARAM_CHI
    domain_size: Tuple[float, float] = (config.GRID_LX, config.GRID_LY)
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    mobility_m: CoeffSpec = field(default_factory=CoeffSpec)
    mobility_n: CoeffSpec = field(default_factory=CoeffSpec)
    viscosity_eta: CoeffSpec = field(default_factory=CoeffSpec)


@dataclass
class ValidationReport:
    """校验报告：failures 为空即通过"""
    failures: List[str] = field(default_factory=list)
    checks: Dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.failures

    def fail(self, message: str):
        self.failures.append(message)

    def to_dict(self) -> dict:
        return {
            'passed': self.passed,
            'failures': list(self.failures),
            'checks': dict(self.checks),
        }


def psi_eval(s: ArrayLike, spec: PotentialSpec) -> Tuple[ArrayLike, ArrayLike, ArrayLike]:
    """
    计算 (Psi(s), Psi'(s), Psi''(s))

    Args:
        s: 标量或数组
        spec: 势函数规格

    Returns:
        三元组，形状与 s 相同
    """
    if spec.kind == "quartic":
        s = np.asarray(s, dtype=float)
        s2 = s * s
        psi = 0.25 * (s2 - 1.0) ** 2
        dpsi = s2 * s - s
        ddpsi = 3.0 * s2 - 1.0
    else:
        c = spec.coefficients
        psi = P.polyval(s, c)
        dpsi = P.polyval(s, P.polyder(c, 1))
        ddpsi = P.polyval(s, P.polyder(c, 2))
    if np.ndim(psi) == 0:
        return float(psi), float(dpsi), float(ddpsi)
    return psi, dpsi, ddpsi


def chemical_free_energy(phi: ArrayLike, sigma: ArrayLike, chi: float) -> Tuple[ArrayLike, ArrayLike, ArrayLike]:
    """
    化学自由能 N = 1/2 sigma^2 + chi sigma (1 - phi) 及其偏导

    Returns:
        (N, N_phi, N_sigma)
    """
    phi = np.asarray(phi, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    n_val = 0.5 * sigma * sigma + chi * sigma * (1.0 - phi)
    n_phi = -chi * sigma * np.ones_like(phi)
    n_sigma = sigma + chi * (1.0 - phi)
    if n_val.ndim == 0:
        return float(n_val), float(n_phi), float(n_sigma)
    return n_val, n_phi, n_sigma


def epsilon_beta_map(beta: float, epsilon: float) -> Tuple[float, float]:
    """由表面张力 beta 与界面厚度 epsilon 得到 (A, B) = (beta/epsilon, beta*epsilon)"""
    if not (beta > 0 and epsilon > 0):
        raise ValueError(f"beta 与 epsilon 必须为正: beta={beta}, epsilon={epsilon}")
    return beta / epsilon, beta * epsilon


def _samples(spec: PotentialSpec, n: int = config.POTENTIAL_SAMPLES) -> np.ndarray:
    return np.linspace(-spec.s_max, spec.s_max, n)


def certify_c4(spec: PotentialSpec, c3: float) -> float:
    """
    求使 Psi(s) >= c3 s^2 - C4 在工作区间上成立的最小 C4

    稠密采样给出初值区间，再用有界一维极小化细化。
    """
    s = _samples(spec)
    psi, _, _ = psi_eval(s, spec)
    g = psi - c3 * s * s
    best = float(np.min(g))

    def objective(x: float) -> float:
        value, _, _ = psi_eval(x, spec)
        return value - c3 * x * x

    for lo, hi in ((-spec.s_max, 0.0), (0.0, spec.s_max)):
        res = minimize_scalar(objective, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
        best = min(best, float(res.fun))
    return max(0.0, -best)


def continuous_dependence_lipschitz(spec: PotentialSpec, n_pairs: int = 200000, seed: int = 0) -> float:
    """采样估计 |Psi'(s1) - Psi'(s2)| <= C5 (1 + |s1|^r + |s2|^r) |s1 - s2| 中的 C5"""
    rng = np.random.default_rng(seed)
    s1 = rng.uniform(-spec.s_max, spec.s_max, n_pairs)
    s2 = rng.uniform(-spec.s_max, spec.s_max, n_pairs)
    _, d1, _ = psi_eval(s1, spec)
    _, d2, _ = psi_eval(s2, spec)
    denom = (1.0 + np.abs(s1) ** spec.r + np.abs(s2) ** spec.r) * np.abs(s1 - s2)
    mask = denom > 1e-12
    return float(np.max(np.abs(d1 - d2)[mask] / denom[mask]))


def _check_coeff(report: ValidationReport, name: str, spec: CoeffSpec, s: np.ndarray):
    lo, hi = spec.lower_bound, spec.upper_bound
    if not lo > 0:
        report.fail(f"{name}: 下界必须为正 (lower={lo})")
    if not lo <= hi:
        report.fail(f"{name}: 下界大于上界 (lower={lo}, upper={hi})")
    values = spec(s)
    if np.any(values < lo) or np.any(values > hi):
        report.fail(f"{name}: 求值越出 [{lo}, {hi}]")
    report.checks[f"{name}_min"] = float(np.min(values))
    report.checks[f"{name}_max"] = float(np.max(values))


def validate_params(p: ModelParams) -> ValidationReport:
    """
    校验结构性假设

    - A > 0, B > 0, chi >= 0，且 A > 2 chi^2 / C3
    - 系数函数上下界为正且有序
    - 工作区间上 Psi >= 0，Psi(s) >= C3 s^2 - C4（容差 CERTIFY_TOL）
    - |Psi''| <= C0 (1 + |s|^r)，|Psi'| <= C1 Psi + C2，S_stab >= max Psi''

    Returns:
        ValidationReport，每项失败都附带相关数值
    """
    report = ValidationReport()
    spec = p.potential

    if not p.A > 0:
        report.fail(f"A 必须为正 (A={p.A})")
    if not p.B > 0:
        report.fail(f"B 必须为正 (B={p.B})")
    if not p.chi >= 0:
        report.fail(f"chi 必须非负 (chi={p.chi})")

    if not spec.C3 > 0:
        report.fail(f"C3 必须为正 (C3={spec.C3})")
    else:
        threshold = 2.0 * p.chi ** 2 / spec.C3
        report.checks['coercivity_threshold'] = threshold
        if not p.A > threshold:
            report.fail(f"强制性条件不满足: A={p.A} <= 2 chi^2 / C3 = {threshold:g} (chi={p.chi}, C3={spec.C3})")

    s = _samples(spec)
    psi, dpsi, ddpsi = psi_eval(s, spec)
    report.checks['psi_min'] = float(np.min(psi))
    if np.any(psi < 0):
        i = int(np.argmin(psi))
        report.fail(f"Psi 在 s={s[i]:.4f} 处为负 (Psi={psi[i]:.3e})")

    lower = psi - spec.C3 * s * s + spec.C4
    report.checks['c4_margin'] = float(np.min(lower))
    if np.any(lower < -config.CERTIFY_TOL):
        i = int(np.argmin(lower))
        report.fail(f"(C3, C4)=({spec.C3}, {spec.C4}) 未能在 s={s[i]:.4f} 处给出下界 (差值={lower[i]:.3e})")

    c0_bound = spec.C0 * (1.0 + np.abs(s) ** spec.r)
    if np.any(np.abs(ddpsi) > c0_bound):
        i = int(np.argmax(np.abs(ddpsi) - c0_bound))
        report.fail(f"|Psi''| 超过 C0(1+|s|^r): s={s[i]:.4f}, C0={spec.C0}, r={spec.r}")
    c1_bound = spec.C1 * psi + spec.C2
    if np.any(np.abs(dpsi) > c1_bound):
        i = int(np.argmax(np.abs(dpsi) - c1_bound))
        report.fail(f"|Psi'| 超过 C1 Psi + C2: s={s[i]:.4f}, C1={spec.C1}, C2={spec.C2}")

    # 仅报告，不参与判定
    report.checks['c4_certified'] = certify_c4(spec, spec.C3)
    report.checks['c5_estimate'] = continuous_dependence_lipschitz(spec)

    sup_dd = float(np.max(ddpsi))
    report.checks['psi_dd_max'] = sup_dd
    if spec.stabilization < sup_dd:
        report.fail(f"稳定化系数 {spec.stabilization} 小于工作区间上的 max Psi'' = {sup_dd:g}")

    _check_coeff(report, "mobility_m", p.mobility_m, s)
    _check_coeff(report, "mobility_n", p.mobility_n, s)
    _check_coeff(report, "viscosity_eta", p.viscosity_eta, s)

    if not (p.domain_size[0] > 0 and p.domain_size[1] > 0):
        report.fail(f"区域尺寸必须为正: {p.domain_size}")

    if report.passed:
        logger.debug("参数校验通过")
    else:
        for message in report.failures:
            logger.warning(f"参数校验: {message}")
    return report


def potential_normalization(spec: PotentialSpec) -> float:
    """计算 ∫_{-1}^{1} sqrt(2 Psi(s)) ds（四次势为 2 sqrt(2) / 3）"""
    value, _ = quad(lambda x: math.sqrt(max(2.0 * psi_eval(x, spec)[0], 0.0)), -1.0, 1.0, limit=200)
    return float(value)
