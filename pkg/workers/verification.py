"""
验证研究 - 与生产离散路径无关的独立对照

- tanh_profile_oracle: 一维稳态界面剖面（四阶差分 + 阻尼 Newton）
- strip_relaxation_check: 二维 tanh 条带预设弛豫到一维剖面
- manufactured_solution_study: 周期制造解的空间/时间收敛阶
- variational_gradient_check: mu 与离散能量泛函有限差分的比较
- perturbation_growth_test: 初值扰动下轨迹差的有界性与标度
- energy_residual_study / energy_monotonicity_audit: 能量恒等式残差的 dt 收敛与无源耗散
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import solve_banded

from core.config_loader import SimConfig, from_values, parse_config_text
from core.diagnostics import total_energy
from core.grid import Grid2D, MacVelocity
from core.model import ModelParams, PotentialSpec, epsilon_beta_map, potential_normalization, psi_eval
from workers.ch_solver import chemical_potential
from workers.ns_solver import project
from workers.simulation import SimState, Simulation, advance, initial_state


logger = logging.getLogger(__name__)

ORDER_TOLERANCE = 0.2
NEWTON_MAXIT = 50
NEWTON_TOL = 1e-13


def default_values() -> Dict[str, object]:
    """全部配置键的默认值"""
    return parse_config_text("")


def build_config(updates: Dict[str, object]) -> SimConfig:
    values = default_values()
    values.update(updates)
    return from_values(values)


def log_log_slope(x: Sequence[float], y: Sequence[float]) -> float:
    return float(np.polyfit(np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float)), 1)[0])


# ----------------------------------------------------------------------
# 一维界面剖面
# ----------------------------------------------------------------------

@dataclass
class TanhOracleResult:
    x: np.ndarray
    phi: np.ndarray
    exact: np.ndarray
    max_error: float
    width_10_90: float
    energy_raw: float  # 单位长度界面能 ∫ A Psi + (B/2) phi'^2
    energy_normalized: float  # energy_raw / ∫_{-1}^{1} sqrt(2 Psi)
    normalization: float
    newton_iterations: int

    def to_dict(self) -> dict:
        return {
            'max_error': self.max_error,
            'width_10_90': self.width_10_90,
            'energy_raw': self.energy_raw,
            'energy_normalized': self.energy_normalized,
            'normalization': self.normalization,
            'newton_iterations': self.newton_iterations,
        }


def _second_derivative_bands(n: int, h: float) -> np.ndarray:
    """内部点的四阶五点二阶导数（紧邻边界的点退化为三点），banded 存储 (2, 2)"""
    ab = np.zeros((5, n))
    inv = 1.0 / (12.0 * h * h)
    # 行 i 的列 j 存于 ab[2 + i - j, j]
    for i in range(n):
        if i == 0 or i == n - 1:
            stencil = {i - 1: 1.0 / h ** 2, i: -2.0 / h ** 2, i + 1: 1.0 / h ** 2}
        else:
            stencil = {i - 2: -inv, i - 1: 16.0 * inv, i: -30.0 * inv, i + 1: 16.0 * inv, i + 2: -inv}
        for j, w in stencil.items():
            if 0 <= j < n:
                ab[2 + i - j, j] = w
    return ab


def _banded_matvec(ab: np.ndarray, x: np.ndarray) -> np.ndarray:
    n = x.size
    y = ab[2] * x
    y[:-1] += ab[1, 1:] * x[1:]
    y[:-2] += ab[0, 2:] * x[2:]
    y[1:] += ab[3, :-1] * x[:-1]
    y[2:] += ab[4, :-2] * x[:-2]
    return y


def tanh_profile_oracle(epsilon: float, beta: float = 1.0, n_points: int = 8001,
                        potential=None) -> TanhOracleResult:
    """
    求解一维稳态 A Psi'(phi) = B phi''，phi(±L) = ±1，L = 17 sqrt(2) epsilon

    Args:
        epsilon: 界面厚度
        beta: 表面张力（A = beta/epsilon, B = beta*epsilon）
        n_points: 网格点数（取奇数使 x = 0 为网格点）
    """
    spec = potential or PotentialSpec()
    A, B = epsilon_beta_map(beta, epsilon)
    if n_points % 2 == 0:
        n_points += 1
    half_width = 17.0 * math.sqrt(2.0) * epsilon
    h = 2.0 * half_width / (n_points - 1)
    x = h * (np.arange(n_points) - (n_points - 1) // 2)

    inner = n_points - 2
    ab = _second_derivative_bands(inner, h)
    # 边界值 ±1 对内部行的贡献
    bc = np.zeros(inner)
    inv = 1.0 / (12.0 * h * h)
    bc[0] += -1.0 / h ** 2
    bc[-1] += 1.0 / h ** 2
    bc[1] += inv  # -(-1/12h^2) * (-1)
    bc[-2] += -inv

    phi = x[1:-1] / np.sqrt(x[1:-1] ** 2 + epsilon ** 2)

    def residual(f: np.ndarray) -> np.ndarray:
        _, dpsi, _ = psi_eval(f, spec)
        return B * (_banded_matvec(ab, f) + bc) - A * dpsi

    res = residual(phi)
    iterations = 0
    for iterations in range(1, NEWTON_MAXIT + 1):
        _, _, ddpsi = psi_eval(phi, spec)
        jac = B * ab.copy()
        jac[2] -= A * ddpsi
        delta = solve_banded((2, 2), jac, -res)
        norm0 = float(np.linalg.norm(res))
        lam = 1.0
        while True:
            trial = phi + lam * delta
            res_trial = residual(trial)
            if np.linalg.norm(res_trial) < norm0 or lam < 1e-4:
                break
            lam *= 0.5
        phi, res = trial, res_trial
        if float(np.max(np.abs(lam * delta))) < NEWTON_TOL:
            break

    profile = np.concatenate([[-1.0], phi, [1.0]])
    exact = np.tanh(x / (math.sqrt(2.0) * epsilon))
    psi, _, _ = psi_eval(profile, spec)
    dphi = np.gradient(profile, h, edge_order=2)
    energy = float(trapezoid(A * psi + 0.5 * B * dphi ** 2, x))
    norm = potential_normalization(spec)
    width = float(np.interp(0.8, profile, x) - np.interp(-0.8, profile, x))

    result = TanhOracleResult(x=x, phi=profile, exact=exact, max_error=float(np.max(np.abs(profile - exact))),
                              width_10_90=width, energy_raw=energy, energy_normalized=energy / norm,
                              normalization=norm, newton_iterations=iterations)
    logger.debug(f"tanh 剖面: eps={epsilon}, Newton 迭代={iterations}, 最大误差={result.max_error:.2e}")
    return result


@dataclass
class StripRelaxationResult:
    max_deviation: float
    t_final: float
    cross_section: np.ndarray
    oracle: np.ndarray

    @property
    def passed(self) -> bool:
        return self.max_deviation <= 1e-3


def strip_relaxation_check(epsilon: float = 0.05, beta: float = 1.0, nx: int = 256, ny: int = 8,
                           t_end: float = 1.0, dt: float = 1e-3) -> StripRelaxationResult:
    """
    tanh 条带预设（初始宽度为平衡宽度两倍）在无流动、无源条件下弛豫，
    与一维剖面比较中间一行的截面
    """
    A, B = epsilon_beta_map(beta, epsilon)
    cfg = build_config({
        "grid.nx": nx, "grid.ny": ny, "grid.Lx": 1.0, "grid.Ly": ny / nx, "grid.bc": "neumann",
        "params.A": A, "params.B": B, "params.chi": 0.0,
        "initial.kind": "strip", "initial.width": 2.0 * math.sqrt(2.0) * epsilon,
        "time.T_end": t_end, "time.dt_init": dt, "time.dt_min": dt, "time.dt_max": dt,
        "solver.flow": False, "output.log_every": 0,
    })
    sim = Simulation(cfg, out_dir=None)
    sim.run()
    oracle = tanh_profile_oracle(epsilon, beta)
    xc, _ = cfg.grid.cell_centers()
    x_line = xc[:, 0] - 0.5 * cfg.grid.lx
    reference = np.interp(x_line, oracle.x, oracle.phi)
    section = sim.state.phi[:, ny // 2]
    deviation = float(np.max(np.abs(section - reference)))
    logger.info(f"条带弛豫: t={sim.state.t:g}, 与一维剖面最大偏差 {deviation:.3e}")
    return StripRelaxationResult(max_deviation=deviation, t_final=sim.state.t,
                                 cross_section=section, oracle=reference)


# ----------------------------------------------------------------------
# 制造解
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class ManufacturedSolution:
    """
    周期单位正方形上的光滑制造解（常系数 m, n, eta，四次势）

        phi   = a e^{-t} cos kx cos ky
        sigma = s0 + b e^{-t} sin kx sin ky
        v     = curl(c e^{-t} sin kx sin ky / k)
        q     = d e^{-t} sin kx sin ky,       k = 2 pi
    """
    a: float = 0.5
    s0: float = 1.0
    b: float = 0.2
    c: float = 0.2
    d: float = 0.1
    A: float = 1.0
    B: float = 0.01
    chi: float = 0.1
    m: float = 0.05
    n: float = 0.1
    eta: float = 0.1
    # |phi| <= a，工作区间取 [-1, 1] 即可，此时 max Psi'' = 2
    stabilization: float = 2.0
    s_max: float = 1.0

    k = 2.0 * math.pi

    def phi(self, x, y, t):
        return self.a * math.exp(-t) * np.cos(self.k * x) * np.cos(self.k * y)

    def phi_grad(self, x, y, t):
        e, k = self.a * math.exp(-t), self.k
        return -e * k * np.sin(k * x) * np.cos(k * y), -e * k * np.cos(k * x) * np.sin(k * y)

    def sigma(self, x, y, t):
        return self.s0 + self.b * math.exp(-t) * np.sin(self.k * x) * np.sin(self.k * y)

    def sigma_grad(self, x, y, t):
        e, k = self.b * math.exp(-t), self.k
        return e * k * np.cos(k * x) * np.sin(k * y), e * k * np.sin(k * x) * np.cos(k * y)

    def stream(self, x, y, t):
        return self.c * math.exp(-t) * np.sin(self.k * x) * np.sin(self.k * y) / self.k

    def velocity(self, x, y, t):
        e, k = self.c * math.exp(-t), self.k
        return e * np.sin(k * x) * np.cos(k * y), -e * np.cos(k * x) * np.sin(k * y)

    def divergence(self, x, y, t):
        """解析 div v（按构造恒为 0）"""
        e, k = self.c * math.exp(-t), self.k
        return e * k * np.cos(k * x) * np.cos(k * y) - e * k * np.cos(k * x) * np.cos(k * y)

    def pressure_grad(self, x, y, t):
        e, k = self.d * math.exp(-t), self.k
        return e * k * np.cos(k * x) * np.sin(k * y), e * k * np.sin(k * x) * np.cos(k * y)

    def mu(self, x, y, t):
        f = self.phi(x, y, t)
        return self.A * (f ** 3 - f) + 2.0 * self.k ** 2 * self.B * f - self.chi * self.sigma(x, y, t)

    def gamma(self, x, y, t):
        """phi 方程的附加源：phi_t + v.grad phi - m lap mu"""
        k2 = self.k ** 2
        f = self.phi(x, y, t)
        fx, fy = self.phi_grad(x, y, t)
        u, w = self.velocity(x, y, t)
        lap_f = -2.0 * k2 * f
        lap_s = -2.0 * k2 * (self.sigma(x, y, t) - self.s0)
        lap_mu = (self.A * (3.0 * f ** 2 * lap_f + 6.0 * f * (fx ** 2 + fy ** 2) - lap_f)
                  + 2.0 * k2 * self.B * lap_f - self.chi * lap_s)
        return -f + u * fx + w * fy - self.m * lap_mu

    def source(self, x, y, t):
        """sigma 方程的附加源：sigma_t + v.grad sigma - n lap sigma + chi n lap phi"""
        k2 = self.k ** 2
        s = self.sigma(x, y, t) - self.s0
        sx, sy = self.sigma_grad(x, y, t)
        u, w = self.velocity(x, y, t)
        lap_f = -2.0 * k2 * self.phi(x, y, t)
        return -s + u * sx + w * sy + self.n * 2.0 * k2 * s + self.chi * self.n * lap_f

    def momentum(self, x, y, t):
        """动量附加源：v_t + (v.grad)v - eta lap v + grad q - (mu + chi sigma) grad phi"""
        e, k = self.c * math.exp(-t), self.k
        u, w = self.velocity(x, y, t)
        ux, uy = e * k * np.cos(k * x) * np.cos(k * y), -e * k * np.sin(k * x) * np.sin(k * y)
        wx, wy = e * k * np.sin(k * x) * np.sin(k * y), -e * k * np.cos(k * x) * np.cos(k * y)
        qx, qy = self.pressure_grad(x, y, t)
        fx, fy = self.phi_grad(x, y, t)
        drive = self.mu(x, y, t) + self.chi * self.sigma(x, y, t)
        lap = -2.0 * k ** 2
        fu = -u + u * ux + w * uy - self.eta * lap * u + qx - drive * fx
        fw = -w + u * wx + w * wy - self.eta * lap * w + qy - drive * fy
        return fu, fw

    def params(self) -> ModelParams:
        cfg = self.config(Grid2D(8, 8, bc="periodic"), 1e-3)
        return cfg.params

    def config(self, grid: Grid2D, dt: float, t_end: float = 0.1) -> SimConfig:
        return build_config({
            "grid.nx": grid.nx, "grid.ny": grid.ny, "grid.bc": "periodic",
            "params.A": self.A, "params.B": self.B, "params.chi": self.chi,
            "potential.stabilization": self.stabilization, "potential.s_max": self.s_max,
            "mobility_m.lower": self.m, "mobility_m.upper": self.m,
            "mobility_n.lower": self.n, "mobility_n.upper": self.n,
            "viscosity.lower": self.eta, "viscosity.upper": self.eta,
            "time.T_end": t_end, "time.dt_init": dt, "time.dt_min": dt, "time.dt_max": dt,
            "solver.krylov_tol": 1e-11, "output.log_every": 0,
        })

    def discrete_velocity(self, grid: Grid2D, t: float) -> MacVelocity:
        """流函数角点值的离散旋度（离散散度恰为 0）"""
        xc = np.arange(grid.nx + 1) * grid.hx
        yc = np.arange(grid.ny + 1) * grid.hy
        X, Y = np.meshgrid(xc, yc, indexing="ij")
        psi = self.stream(X, Y, t)
        u = (psi[:, 1:] - psi[:, :-1]) / grid.hy
        v = -(psi[1:, :] - psi[:-1, :]) / grid.hx
        return grid.enforce_bc(MacVelocity(u, v))

    def exact_state(self, grid: Grid2D, t: float) -> SimState:
        x, y = grid.cell_centers()
        phi = self.phi(x, y, t)
        sigma = self.sigma(x, y, t)
        return SimState(t=t, step=0, phi=phi, mu=np.zeros(grid.shape), sigma=sigma,
                        v=self.discrete_velocity(grid, t), q=grid.zeros())

    def forcing(self, grid: Grid2D):
        x, y = grid.cell_centers()
        xu, yu = grid.u_faces()
        xv, yv = grid.v_faces()

        def evaluate(t: float):
            fu, _ = self.momentum(xu, yu, t)
            _, fw = self.momentum(xv, yv, t)
            return self.gamma(x, y, t), self.source(x, y, t), grid.enforce_bc(MacVelocity(fu, fw))

        return evaluate


@dataclass
class ConvergenceRow:
    n: int
    dt: float
    err_phi: float
    err_sigma: float
    err_v: float


@dataclass
class ConvergenceTable:
    kind: str  # 'space' 或 'time'
    rows: List[ConvergenceRow] = field(default_factory=list)
    orders: Dict[str, List[float]] = field(default_factory=dict)
    expected: float = 2.0

    @property
    def passed(self) -> bool:
        return all(abs(o - self.expected) <= ORDER_TOLERANCE for values in self.orders.values() for o in values)

    def to_csv(self, path: str):
        with open(path, "w") as f:
            f.write("n,dt,err_phi,err_sigma,err_v\n")
            for r in self.rows:
                f.write(f"{r.n},{r.dt:.17g},{r.err_phi:.17g},{r.err_sigma:.17g},{r.err_v:.17g}\n")

    def format(self) -> str:
        header = "时间" if self.kind == "time" else "空间"
        lines = [f"{header}收敛表（期望阶 {self.expected:g} ± {ORDER_TOLERANCE}）",
                 f"{'n':>6} {'dt':>12} {'err_phi':>12} {'err_sigma':>12} {'err_v':>12}"]
        for r in self.rows:
            lines.append(f"{r.n:>6} {r.dt:>12.4e} {r.err_phi:>12.4e} {r.err_sigma:>12.4e} {r.err_v:>12.4e}")
        for name, values in self.orders.items():
            lines.append(f"  阶({name}): " + ", ".join(f"{o:.3f}" for o in values))
        return "\n".join(lines)


def _l2(grid: Grid2D, f: np.ndarray) -> float:
    return math.sqrt(grid.inner(f, f))


def _face_l2(grid: Grid2D, w: MacVelocity) -> float:
    return math.sqrt(grid.face_inner(w, w))


def run_manufactured(sol: ManufacturedSolution, n: int, dt: float, t_end: float) -> SimState:
    """在 n x n 周期网格上以固定 dt 推进制造解到 t_end"""
    grid = Grid2D(n, n, bc="periodic")
    cfg = sol.config(grid, dt, t_end)
    state = sol.exact_state(grid, 0.0)
    state.mu = chemical_potential(grid, state.phi, state.sigma, cfg.params)
    state.report = total_energy(grid, state, cfg.params)
    steps = max(1, int(round(t_end / dt)))
    dt = t_end / steps
    forcing = sol.forcing(grid)
    for _ in range(steps):
        state = advance(grid, state, dt, cfg.params, cfg.sources, cfg.solver, forcing).state
    return state


def manufactured_solution_study(resolutions: Sequence[int] = (32, 64, 128), t_end: float = 0.1,
                                dt_rule: str = "h2", dt_coeff: float = 0.25,
                                solution: Optional[ManufacturedSolution] = None) -> ConvergenceTable:
    """
    空间收敛研究

    Args:
        resolutions: 网格序列（每次加倍）
        dt_rule: 'h2' 取 dt = dt_coeff h^2（使一阶时间误差与二阶空间误差同阶），
                 'fixed' 取 dt = dt_coeff
    """
    if dt_rule not in ("h2", "fixed"):
        raise ValueError(f"未知 dt 规则: {dt_rule}")
    sol = solution or ManufacturedSolution()
    table = ConvergenceTable(kind="space", expected=2.0)
    for n in resolutions:
        h = 1.0 / n
        dt = dt_coeff * h * h if dt_rule == "h2" else dt_coeff
        state = run_manufactured(sol, n, dt, t_end)
        grid = Grid2D(n, n, bc="periodic")
        exact = sol.exact_state(grid, state.t)
        xu, yu = grid.u_faces()
        xv, yv = grid.v_faces()
        v_exact = grid.enforce_bc(MacVelocity(sol.velocity(xu, yu, state.t)[0], sol.velocity(xv, yv, state.t)[1]))
        row = ConvergenceRow(n=n, dt=dt, err_phi=_l2(grid, state.phi - exact.phi),
                             err_sigma=_l2(grid, state.sigma - exact.sigma),
                             err_v=_face_l2(grid, state.v - v_exact))
        table.rows.append(row)
        logger.info(f"制造解 n={n}: err_phi={row.err_phi:.3e}, err_sigma={row.err_sigma:.3e}, err_v={row.err_v:.3e}")
    for name in ("phi", "sigma", "v"):
        errs = [getattr(r, f"err_{name}") for r in table.rows]
        table.orders[name] = [math.log2(e0 / e1) if e1 > 0 else float("inf") for e0, e1 in zip(errs, errs[1:])]
    return table


def temporal_order_study(n: int = 128, t_end: float = 0.1, dts: Sequence[float] = (4e-3, 2e-3, 1e-3, 5e-4),
                         solution: Optional[ManufacturedSolution] = None) -> ConvergenceTable:
    """固定网格上 dt 逐次减半，用相邻解之差估计时间阶"""
    sol = solution or ManufacturedSolution()
    grid = Grid2D(n, n, bc="periodic")
    states = [run_manufactured(sol, n, dt, t_end) for dt in dts]
    table = ConvergenceTable(kind="time", expected=1.0)
    for dt, coarse, fine in zip(dts, states, states[1:]):
        table.rows.append(ConvergenceRow(n=n, dt=dt, err_phi=_l2(grid, coarse.phi - fine.phi),
                                         err_sigma=_l2(grid, coarse.sigma - fine.sigma),
                                         err_v=_face_l2(grid, coarse.v - fine.v)))
    for name in ("phi", "sigma", "v"):
        errs = [getattr(r, f"err_{name}") for r in table.rows]
        table.orders[name] = [math.log2(e0 / e1) if e1 > 0 else float("inf") for e0, e1 in zip(errs, errs[1:])]
    return table


# ----------------------------------------------------------------------
# 变分梯度检查
# ----------------------------------------------------------------------

def discrete_free_energy(grid: Grid2D, phi: np.ndarray, sigma: np.ndarray, p: ModelParams) -> float:
    """E_h[phi] = Σ (A Psi(phi) + chi sigma (1 - phi)) h^2 + (B/2) Σ_faces |grad phi|^2 h^2"""
    psi, _, _ = psi_eval(phi, p.potential)
    g = grid.gradient(phi)
    return (grid.integrate(p.A * psi + p.chi * sigma * (1.0 - phi))
            + 0.5 * p.B * grid.face_inner(g, g))


def variational_gradient_check(grid: Grid2D, phi: np.ndarray, sigma: np.ndarray, p: ModelParams,
                               n_cells: int = 100, step: float = 1e-5, seed: int = 0) -> float:
    """
    在随机单元上比较 mu 与 E_h 的中心差分 (E(phi + d e_k) - E(phi - d e_k)) / (2 d h^2)

    Returns:
        max |fd - mu| / max(|mu|_inf, 1)
    """
    mu = chemical_potential(grid, phi, sigma, p)
    rng = np.random.default_rng(seed)
    flat = rng.choice(phi.size, size=min(n_cells, phi.size), replace=False)
    scale = max(float(np.max(np.abs(mu))), 1.0)
    worst = 0.0
    for k in flat:
        i, j = np.unravel_index(k, phi.shape)
        plus = phi.copy()
        minus = phi.copy()
        plus[i, j] += step
        minus[i, j] -= step
        fd = (discrete_free_energy(grid, plus, sigma, p) - discrete_free_energy(grid, minus, sigma, p)) \
            / (2.0 * step * grid.cell_area)
        worst = max(worst, abs(fd - mu[i, j]) / scale)
    return worst


# ----------------------------------------------------------------------
# 连续依赖性
# ----------------------------------------------------------------------

def _velocity_gradient_sq(grid: Grid2D, w: MacVelocity) -> float:
    total = 0.0
    for comp in (w.u, w.v):
        total += np.sum(np.diff(comp, axis=0) ** 2) / grid.hx ** 2
        total += np.sum(np.diff(comp, axis=1) ** 2) / grid.hy ** 2
    return float(total) * grid.cell_area


def _h2_sq(grid: Grid2D, f: np.ndarray) -> float:
    g = grid.gradient(f)
    lap = grid.laplacian(f)
    return grid.inner(f, f) + grid.face_inner(g, g) + grid.inner(lap, lap)


def perturbation_direction(grid: Grid2D, seed: int = 0) -> Tuple[np.ndarray, np.ndarray, MacVelocity]:
    """单位 L2 范数的 (phi, sigma, v) 扰动方向；速度部分为投影后的随机场"""
    x, y = grid.cell_centers()
    dphi = np.cos(math.pi * x / grid.lx) * np.cos(math.pi * y / grid.ly)
    dsigma = np.cos(2.0 * math.pi * x / grid.lx)
    rng = np.random.default_rng(seed)
    raw = grid.enforce_bc(MacVelocity(rng.standard_normal((grid.nx + 1, grid.ny)),
                                      rng.standard_normal((grid.nx, grid.ny + 1))))
    dv, _ = project(grid, raw)
    norm = math.sqrt(grid.inner(dphi, dphi) + grid.inner(dsigma, dsigma) + grid.face_inner(dv, dv))
    return dphi / norm, dsigma / norm, dv * (1.0 / norm)


def _difference_norms(grid: Grid2D, a: SimState, b: SimState) -> Tuple[float, float]:
    """(瞬时平方 L2 差, 被积的耗散型范数)"""
    dphi, dsigma, dv = a.phi - b.phi, a.sigma - b.sigma, a.v - b.v
    dmu = a.mu - b.mu
    g_sigma = grid.gradient(dsigma)
    instant = grid.inner(dphi, dphi) + grid.inner(dsigma, dsigma) + grid.face_inner(dv, dv)
    integrand = (grid.inner(dmu, dmu) + grid.face_inner(g_sigma, g_sigma)
                 + _velocity_gradient_sq(grid, dv) + _h2_sq(grid, dphi))
    return instant, integrand


def trajectory_distance(cfg: SimConfig, base: SimState, other: SimState, t_end: float,
                        forcing_other=None) -> List[float]:
    """两条轨迹以相同固定 dt 同步推进，返回每步的 d(t)"""
    grid, p, dt = cfg.grid, cfg.params, cfg.time.dt_max
    steps = max(1, int(round(t_end / dt)))
    dt = t_end / steps
    instant, integrand = _difference_norms(grid, base, other)
    running = 0.0
    history = [instant]
    a, b = base, other
    for _ in range(steps):
        a_next = advance(grid, a, dt, p, cfg.sources, cfg.solver).state
        b_next = advance(grid, b, dt, p, cfg.sources, cfg.solver, forcing_other).state
        instant, integrand_next = _difference_norms(grid, a_next, b_next)
        running += 0.5 * dt * (integrand + integrand_next)
        integrand = integrand_next
        history.append(instant + running)
        a, b = a_next, b_next
    return history


@dataclass
class PerturbationReport:
    deltas: List[float]
    d0: List[float]
    dT: List[float]
    growth: List[float]  # max_t d(t)/d(0)
    slope: float
    finite: bool

    @property
    def passed(self) -> bool:
        return self.finite and abs(self.slope - 1.0) <= 0.3

    def format(self) -> str:
        lines = [f"{'delta0':>12} {'d(0)':>12} {'d(T)':>12} {'K':>10}"]
        for delta, d0, dT, k in zip(self.deltas, self.d0, self.dT, self.growth):
            lines.append(f"{delta:>12.4e} {d0:>12.4e} {dT:>12.4e} {k:>10.3f}")
        lines.append(f"log-log 斜率 d(T) ~ d(0): {self.slope:.3f}（期望 1.0 ± 0.3）")
        return "\n".join(lines)


def perturbation_growth_test(cfg: SimConfig, deltas: Sequence[float] = (1e-4, 5e-5, 2.5e-5),
                             t_end: float = 0.25, seed: int = 0) -> PerturbationReport:
    """
    初值相差 delta0 (L2) 的两条轨迹，d(T) 对 d(0) 的标度与有界性
    """
    grid, p = cfg.grid, cfg.params
    base = initial_state(cfg)
    dphi, dsigma, dv = perturbation_direction(grid, seed)
    d0s, dTs, growth = [], [], []
    finite = True
    for delta in deltas:
        phi = base.phi + delta * dphi
        sigma = base.sigma + delta * dsigma
        other = SimState(t=base.t, step=0, phi=phi, mu=chemical_potential(grid, phi, sigma, p), sigma=sigma,
                         v=base.v + dv * delta, q=base.q.copy())
        other.report = total_energy(grid, other, p)
        history = trajectory_distance(cfg, base, other, t_end)
        finite = finite and bool(np.all(np.isfinite(history)))
        d0s.append(history[0])
        dTs.append(history[-1])
        growth.append(max(history) / history[0] if history[0] > 0 else 0.0)
        logger.info(f"扰动 delta0={delta:g}: d(0)={history[0]:.3e}, d(T)={history[-1]:.3e}")
    slope = log_log_slope(d0s, dTs) if len(deltas) > 1 and min(d0s) > 0 else float("nan")
    return PerturbationReport(deltas=list(deltas), d0=d0s, dT=dTs, growth=growth, slope=slope, finite=finite)


def source_perturbation_sweep(cfg: SimConfig, amplitudes: Sequence[float], t_end: float = 0.25) -> List[float]:
    """初值相同、Gamma 相差 amplitude * cos 模式时的 d(T)"""
    grid = cfg.grid
    base = initial_state(cfg)
    x, y = grid.cell_centers()
    mode = np.cos(math.pi * x / grid.lx) * np.cos(math.pi * y / grid.ly)
    results = []
    for amp in amplitudes:
        def forcing(_t: float, amp=amp):
            return amp * mode, grid.zeros(), None
        results.append(trajectory_distance(cfg, base, base.copy(), t_end, forcing)[-1])
    return results


# ----------------------------------------------------------------------
# 能量研究
# ----------------------------------------------------------------------

def acceptance_energy_config(n: int = 128, chi: float = 0.25, sources: bool = True, t_end: float = 0.5,
                             dt: float = 1e-3, A: float = 2.0, B: float = 0.01) -> SimConfig:
    """能量研究的默认设置：低阶模式初值（均值 -0.8）、常系数、可选增殖源"""
    updates = {
        "grid.nx": n, "grid.ny": n, "params.A": A, "params.B": B, "params.chi": chi,
        "initial.kind": "modes", "initial.mean": -0.8, "initial.amplitude": 0.05,
        "initial.modes": 2, "initial.sigma_value": 1.0,
        "time.T_end": t_end, "time.dt_init": dt, "time.dt_min": dt, "time.dt_max": dt,
        "output.log_every": 0,
    }
    if sources:
        updates.update({"sources.kind": "proliferation", "sources.proliferation": 0.5,
                        "sources.apoptosis": 0.1, "sources.consumption": 0.5})
    return build_config(updates)


@dataclass
class EnergyStudyReport:
    dts: List[float]
    residuals: List[float]
    slope: float
    max_mass_residual: float

    @property
    def passed(self) -> bool:
        return abs(self.slope - 1.0) <= ORDER_TOLERANCE

    def format(self) -> str:
        lines = [f"{'dt':>12} {'|imbalance(T)|':>16}"]
        lines += [f"{dt:>12.4e} {r:>16.6e}" for dt, r in zip(self.dts, self.residuals)]
        lines.append(f"斜率: {self.slope:.3f}（期望 1.0 ± {ORDER_TOLERANCE}）")
        lines.append(f"最大质量平衡残差: {self.max_mass_residual:.3e}")
        return "\n".join(lines)


def energy_residual_study(cfg: SimConfig, dts: Sequence[float] = (4e-3, 2e-3, 1e-3),
                          t_end: Optional[float] = None) -> EnergyStudyReport:
    """同一初值、不同固定 dt 推进到 T，比较最后一步的能量恒等式残差"""
    t_end = cfg.time.T_end if t_end is None else t_end
    residuals, mass = [], 0.0
    for dt in dts:
        run_cfg = cfg.override({"time.dt_init": dt, "time.dt_min": dt, "time.dt_max": dt, "time.T_end": t_end})
        sim = Simulation(run_cfg, out_dir=None)
        sim.run()
        last = sim.series_rows[-1]
        residuals.append(abs(last['imbalance']))
        for row in sim.series_rows[1:]:
            mass = max(mass, abs(row['mass_phi']), abs(row['mass_sigma']))
        logger.info(f"能量研究 dt={dt:g}: |imbalance(T)|={residuals[-1]:.3e}")
    return EnergyStudyReport(dts=list(dts), residuals=residuals, slope=log_log_slope(dts, residuals),
                             max_mass_residual=mass)


@dataclass
class MonotonicityReport:
    energies: List[float]
    max_increase: float  # max (E_{n+1} - E_n) / E_0
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_increase <= self.tolerance


def energy_monotonicity_audit(cfg: SimConfig, steps: Optional[int] = None,
                              tolerance: float = 1e-10) -> MonotonicityReport:
    """无源、无对流、chi = 0 时逐步检查 E(t_{n+1}) <= E(t_n) + tol E_0"""
    if steps is not None:
        cfg = cfg.override({"time.T_end": steps * cfg.time.dt_max})
    sim = Simulation(cfg, out_dir=None)
    sim.run()
    energies = [row['E_total'] for row in sim.series_rows]
    e0 = energies[0] if energies[0] != 0 else 1.0
    increases = np.diff(energies) / abs(e0)
    return MonotonicityReport(energies=energies,
                              max_increase=float(np.max(increases)) if increases.size else 0.0,
                              tolerance=tolerance)
