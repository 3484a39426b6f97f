"""
时间推进主循环

每步顺序：eval_sources -> ch_step -> sigma_step -> ns_step -> 诊断 -> 可选快照。
步长由 CFL 与交叉扩散显式项约束自适应选取，失败时减半重试。
"""
import glob
import logging
import os
import re
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

import config
from core.config_loader import SimConfig, SolverSpec, check_validation
from core.diagnostics import (EnergyReport, HealthReport, advective_dt_bound, dissipation_terms, divergence_max,
                              energy_balance_residual, health, mass_balance, source_work, total_energy)
from core.errors import SimulationAborted, StepFailure
from core.grid import Grid2D, MacVelocity
from core.io import (load_checkpoint, read_snapshot, save_checkpoint, write_manifest, write_series_header,
                     write_series_row)
from core.model import ModelParams
from core.sources import SourceSpec, eval_sources, lipschitz_bound
from workers.ch_solver import ChStepConfig, ch_step, chemical_potential
from workers.ns_solver import modified_pressure, ns_step, recover_physical_pressure
from workers.nutrient_solver import sigma_step
from workers.snapshot_writer import SnapshotJob, SnapshotWriter


logger = logging.getLogger(__name__)

# t -> (Gamma 附加项, S 附加项, 动量附加项)，在 t_{n+1} 求值
ForcingFn = Callable[[float], Tuple[np.ndarray, np.ndarray, Optional[MacVelocity]]]


@dataclass
class SimState:
    """某一时刻的完整解"""
    t: float
    step: int
    phi: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    v: MacVelocity
    q: np.ndarray
    report: Optional[EnergyReport] = None

    def copy(self) -> "SimState":
        return SimState(t=self.t, step=self.step, phi=self.phi.copy(), mu=self.mu.copy(),
                        sigma=self.sigma.copy(), v=self.v.copy(), q=self.q.copy(), report=self.report)


@dataclass
class StepOutcome:
    state: SimState
    row: Dict[str, float]
    gamma: np.ndarray
    s: np.ndarray
    iterations: Dict[str, int]


@dataclass
class RunReport:
    """一次运行的汇总"""
    steps: int
    t_final: float
    wall_time: float
    tags: List[str] = field(default_factory=list)
    max_imbalance: float = 0.0
    max_mass_residual: float = 0.0
    max_div: float = 0.0
    snapshots_written: int = 0
    series_path: Optional[str] = None
    checkpoint: Optional[str] = None
    manifest: Optional[dict] = None

    def to_dict(self) -> dict:
        return {
            'steps': self.steps,
            't_final': self.t_final,
            'wall_time': self.wall_time,
            'tags': list(self.tags),
            'max_imbalance': self.max_imbalance,
            'max_mass_residual': self.max_mass_residual,
            'max_div': self.max_div,
            'snapshots_written': self.snapshots_written,
            'series_path': self.series_path,
            'checkpoint': self.checkpoint,
        }


# ----------------------------------------------------------------------
# 初值
# ----------------------------------------------------------------------

def smooth_neumann(grid: Grid2D, f: np.ndarray, steps: int = config.INITIAL_SMOOTHING_STEPS) -> np.ndarray:
    """几步显式热方程光滑（保持均值）"""
    kappa = 0.2 * min(grid.hx, grid.hy) ** 2
    out = f.copy()
    for _ in range(steps):
        out = out + kappa * grid.laplacian(out)
    return out


def low_mode_field(grid: Grid2D, rng: np.random.Generator, modes: int) -> np.ndarray:
    """
    低阶余弦模式的随机叠加，最大模归一化为 1

    模式 (i, j) 取 0..modes（不含 (0, 0)），在两种边界条件下都是离散拉普拉斯的特征函数，均值在舍入误差内为 0。
    """
    x, y = grid.cell_centers()
    base = 2.0 * np.pi if grid.periodic else np.pi
    out = grid.zeros()
    for i in range(modes + 1):
        for j in range(modes + 1):
            if i == 0 and j == 0:
                continue
            out += rng.uniform(-1.0, 1.0) * np.cos(base * i * x / grid.lx) * np.cos(base * j * y / grid.ly)
    return out / np.max(np.abs(out))


def _latest_field(directory: str, name: str) -> np.ndarray:
    paths = glob.glob(os.path.join(directory, f"{name}_*.csv"))
    if not paths:
        raise FileNotFoundError(f"{directory} 中没有 {name}_*.csv")

    def step_of(path: str) -> int:
        m = re.search(r"_(\d+)\.csv$", path)
        return int(m.group(1)) if m else -1

    return read_snapshot(max(paths, key=step_of)).values


def initial_state(cfg: SimConfig) -> SimState:
    """
    按 initial.* 构造初值；所有预设的速度初值均为 0

    Raises:
        ValueError: file 预设的场形状与网格不符
    """
    grid, init, p = cfg.grid, cfg.initial, cfg.params
    rng = np.random.default_rng(init.seed)
    x, y = grid.cell_centers()

    if init.kind == "uniform":
        phi = np.full(grid.shape, init.value)
    elif init.kind == "random":
        phi = smooth_neumann(grid, init.mean + init.amplitude * rng.uniform(-1.0, 1.0, grid.shape))
    elif init.kind == "modes":
        phi = init.mean + init.amplitude * low_mode_field(grid, rng, init.modes)
    elif init.kind == "disk":
        r = np.hypot(x - 0.5 * grid.lx, y - 0.5 * grid.ly)
        phi = smooth_neumann(grid, np.tanh((init.radius - r) / init.width))
    elif init.kind == "strip":
        phi = smooth_neumann(grid, np.tanh((x - 0.5 * grid.lx) / init.width))
    else:
        phi = _latest_field(init.path, "phi")

    if init.kind == "file":
        try:
            sigma = _latest_field(init.path, "sigma")
        except FileNotFoundError:
            sigma = np.full(grid.shape, init.sigma_value)
    elif init.sigma_amplitude > 0 and init.kind == "modes":
        sigma = init.sigma_value + init.sigma_amplitude * low_mode_field(grid, rng, init.modes)
    elif init.sigma_amplitude > 0:
        sigma = smooth_neumann(grid, init.sigma_value + init.sigma_amplitude * rng.uniform(-1.0, 1.0, grid.shape))
    else:
        sigma = np.full(grid.shape, init.sigma_value)

    if phi.shape != grid.shape or sigma.shape != grid.shape:
        raise ValueError(f"初值形状 {phi.shape}/{sigma.shape} 与网格 {grid.shape} 不符")

    q = grid.zeros()
    if init.kind == "file":
        # 快照存的是物理压力，换回修正压力作为压力增量格式的初值
        try:
            pressure = _latest_field(init.path, "pressure")
        except FileNotFoundError:
            pressure = None
        if pressure is not None:
            if pressure.shape != grid.shape:
                raise ValueError(f"压力快照形状 {pressure.shape} 与网格 {grid.shape} 不符")
            q = modified_pressure(grid, pressure, phi, p)

    state = SimState(t=0.0, step=0, phi=phi, mu=chemical_potential(grid, phi, sigma, p), sigma=sigma,
                     v=grid.zero_velocity(), q=q)
    state.report = total_energy(grid, state, p)
    return state


# ----------------------------------------------------------------------
# 单步
# ----------------------------------------------------------------------

def _initial_row(grid: Grid2D, state: SimState) -> Dict[str, float]:
    r = state.report
    return {
        't': state.t, 'dt': 0.0,
        'E_total': r.E_total, 'E_kin': r.E_kinetic, 'E_gl': r.E_ginzburg_landau, 'E_chem': r.E_chemical,
        'D_mu': 0.0, 'D_sigma': 0.0, 'D_visc': 0.0, 'W_sources': 0.0, 'imbalance': 0.0,
        'mass_phi': 0.0, 'mass_sigma': 0.0,
        'div_max': divergence_max(grid, state.v), 'krylov_iters': 0,
    }


def advance(grid: Grid2D, state: SimState, dt: float, p: ModelParams, sources: SourceSpec,
            solver: SolverSpec, forcing: Optional[ForcingFn] = None) -> StepOutcome:
    """
    推进一步（不修改输入状态）

    Raises:
        StepFailure: 任一子步失败
    """
    gamma, s = eval_sources(grid, state.phi, state.sigma, state.t, sources)
    momentum = None
    if forcing is not None:
        g_extra, s_extra, momentum = forcing(state.t + dt)
        gamma = gamma + g_extra
        s = s + s_extra

    ch = ch_step(grid, state.phi, state.sigma, state.v, gamma,
                 ChStepConfig(dt=dt, stabilization=p.potential.stabilization,
                              krylov_tol=solver.krylov_tol, krylov_maxit=solver.krylov_maxit), p)
    nu = sigma_step(grid, state.sigma, ch.phi, state.v, s, dt, p,
                    krylov_tol=solver.krylov_tol, krylov_maxit=solver.krylov_maxit)
    iterations = {'ch': ch.iterations, 'sigma': nu.iterations, 'ns': 0}

    if solver.flow:
        ns = ns_step(grid, state.v, ch.phi, ch.mu, nu.sigma, dt, p, forcing=momentum,
                     krylov_tol=solver.krylov_tol, krylov_maxit=solver.krylov_maxit,
                     poisson_tol=solver.poisson_tol)
        v_next, q_next, div_max = ns.v, ns.q, ns.div_max
        iterations['ns'] = ns.iterations
    else:
        v_next, q_next, div_max = grid.zero_velocity(), grid.zeros(), 0.0

    new = SimState(t=state.t + dt, step=state.step + 1, phi=ch.phi,
                   mu=chemical_potential(grid, ch.phi, nu.sigma, p), sigma=nu.sigma, v=v_next, q=q_next)
    new.report = total_energy(grid, new, p)

    diss = dissipation_terms(grid, state.phi, ch.phi, ch.mu, nu.sigma, v_next, p,
                             mobility_faces=ch.mobility_faces, diffusivity_faces=nu.diffusivity_faces)
    work = source_work(grid, ch.phi, ch.mu, nu.sigma, gamma, s, p)
    imbalance = energy_balance_residual(state.report, new.report, diss, work, dt)
    new.report.D_mu, new.report.D_sigma, new.report.D_visc = diss.D_mu, diss.D_sigma, diss.D_visc
    new.report.W_sources = work
    new.report.imbalance = imbalance
    phi_res, sigma_res = mass_balance(grid, state, new, gamma, s, dt)

    r = new.report
    row = {
        't': new.t, 'dt': dt,
        'E_total': r.E_total, 'E_kin': r.E_kinetic, 'E_gl': r.E_ginzburg_landau, 'E_chem': r.E_chemical,
        'D_mu': r.D_mu, 'D_sigma': r.D_sigma, 'D_visc': r.D_visc, 'W_sources': r.W_sources,
        'imbalance': imbalance, 'mass_phi': phi_res, 'mass_sigma': sigma_res,
        'div_max': div_max, 'krylov_iters': sum(iterations.values()),
    }
    return StepOutcome(state=new, row=row, gamma=gamma, s=s, iterations=iterations)


# ----------------------------------------------------------------------
# 运行
# ----------------------------------------------------------------------

class Simulation:
    """
    一次模拟运行

    Args:
        cfg: 运行配置
        out_dir: 输出目录；None 表示只在内存中推进，不写任何文件
        forcing: 制造解研究用的附加源项
        initial: 自定义初值（默认按 cfg.initial 构造）
        config_text: 写入运行清单哈希的配置文本
    """

    def __init__(self, cfg: SimConfig, out_dir: Optional[str] = None, forcing: Optional[ForcingFn] = None,
                 initial: Optional[SimState] = None, config_text: Optional[str] = None):
        self.cfg = cfg
        self.grid = cfg.grid
        self.p = cfg.params
        self.out_dir = out_dir
        self.forcing = forcing
        self.config_text = config_text if config_text is not None else cfg.to_text()

        self.state = initial.copy() if initial is not None else initial_state(cfg)
        if self.state.report is None:
            self.state.report = total_energy(self.grid, self.state, self.p)
        self.dt_prev: Optional[float] = None  # 上一个被接受且未截短的步长
        self.last_health: Optional[HealthReport] = None
        self.series_rows: List[Dict[str, float]] = [_initial_row(self.grid, self.state)]
        self.tags: List[str] = []
        self.writer: Optional[SnapshotWriter] = None
        self._bound_warned = False
        self._clipped = False

        # 工作区间上源项的 Lipschitz 常数 (L_Gamma, L_S)；给定源项时为 None
        self.source_lipschitz: Optional[Tuple[float, float]] = None
        if cfg.sources.is_state_dependent:
            sigma_bound = max(1.0, float(np.max(np.abs(self.state.sigma))))
            self.source_lipschitz = lipschitz_bound(cfg.sources, self.p.potential.s_max, sigma_bound)
            logger.warning(f"源项 '{cfg.sources.kind}' 依赖于解，超出给定源项的存在性假设 "
                           f"(L_Gamma={self.source_lipschitz[0]:.3g}, L_S={self.source_lipschitz[1]:.3g})")
            self.tags.append("state_dependent_sources")
        if not cfg.solver.flow:
            self.tags.append("flow_disabled")

    # -- 路径 ----------------------------------------------------------

    def _path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    @property
    def series_path(self) -> Optional[str]:
        return self._path(self.cfg.output.series_path) if self.out_dir is not None else None

    # -- 步长 ----------------------------------------------------------

    def dt_bounds(self) -> Tuple[float, float]:
        """(CFL 上界, 交叉扩散显式项上界)"""
        cfl = advective_dt_bound(self.grid, self.state.v, self.cfg.time.cfl_safety)
        h2 = min(self.grid.hx, self.grid.hy) ** 2
        cross = config.CROSS_TERM_FACTOR * h2 / (self.p.chi * self.p.mobility_n.upper_bound + config.MACHINE_GUARD)
        return cfl, cross

    def next_dt(self, t_end: float) -> float:
        ts = self.cfg.time
        cfl, cross = self.dt_bounds()
        bound = min(cfl, cross)
        if ts.fixed:
            dt = ts.dt_max
            if dt > bound and not self._bound_warned:
                logger.warning(f"固定步长 dt={dt:g} 超过稳定性界 {bound:.3e}（CFL={cfl:.3e}, 交叉项={cross:.3e}）")
                self._bound_warned = True
                self.tags.append("fixed_dt_bound_exceeded")
        else:
            base = ts.dt_init if self.dt_prev is None else ts.growth * self.dt_prev
            dt = min(ts.dt_max, base, bound)
            if dt < ts.dt_min:
                if not self._bound_warned:
                    logger.warning(f"稳定性界 {bound:.3e} 低于 dt_min={ts.dt_min:g}，使用 dt_min")
                    self._bound_warned = True
                dt = ts.dt_min
        remaining = t_end - self.state.t
        self._clipped = dt >= remaining * (1.0 - 1e-12)
        if self._clipped:
            dt = remaining
        return dt

    # -- 单步与重试 ----------------------------------------------------

    def _check_health(self, outcome: StepOutcome, dt: float) -> HealthReport:
        """
        步后健康检查；NaN、散度超限或（自适应时）越过 CFL 数 1 都视为步失败

        Raises:
            StepFailure: 检查不通过
        """
        v = outcome.state.v
        report = health(self.grid, outcome.state, dt, 1.0, krylov_iterations=outcome.iterations,
                        s_max=self.p.potential.s_max,
                        div_limit=config.DIV_REL_TOL * v.max_abs() + self.cfg.solver.poisson_tol)
        if not report.finite:
            raise StepFailure("health", "步后状态含 NaN/Inf")
        if not report.div_ok:
            raise StepFailure("health", "步后散度超限", residual=report.div_max)
        if report.cfl_margin > 1.0 and not self.cfg.time.fixed:
            raise StepFailure("health", f"CFL 数 {report.cfl_margin:.3f} > 1", residual=report.cfl_margin)
        for message in report.warnings:
            logger.debug(f"第 {outcome.state.step} 步: {message}")
        return report

    def step(self, t_end: float) -> StepOutcome:
        """
        推进一个被接受的时间步

        失败时 dt 减半重试，至多 MAX_STEP_RETRIES 次；自适应运行不低于 dt_min，
        固定步长运行的重试步只用于这一步，之后恢复名义步长。

        Raises:
            SimulationAborted: 重试耗尽（已写检查点）
        """
        ts = self.cfg.time
        floor = 0.0 if ts.fixed else ts.dt_min
        dt = self.next_dt(t_end)
        for attempt in range(config.MAX_STEP_RETRIES + 1):
            try:
                outcome = advance(self.grid, self.state, dt, self.p, self.cfg.sources, self.cfg.solver, self.forcing)
                self.last_health = self._check_health(outcome, dt)
                break
            except StepFailure as e:
                new_dt = 0.5 * dt
                if attempt == config.MAX_STEP_RETRIES or new_dt < floor:
                    logger.error(f"第 {self.state.step + 1} 步失败且无法继续减半: {e}")
                    checkpoint = self.write_checkpoint("checkpoint_abort.npz")
                    raise SimulationAborted(f"t={self.state.t:g} 处步进失败: {e}", checkpoint=checkpoint) from e
                logger.warning(f"第 {self.state.step + 1} 步失败（{e}），dt {dt:g} -> {new_dt:g} 重试")
                dt = new_dt
                self._clipped = False
                if "step_retried" not in self.tags:
                    self.tags.append("step_retried")

        self.state = outcome.state
        # 为落在 T_end 而截短的最后一步不作为增长基准
        if not self._clipped:
            self.dt_prev = outcome.row['dt']
        self.series_rows.append(outcome.row)
        return outcome

    # -- 输出 ----------------------------------------------------------

    def snapshot_job(self) -> SnapshotJob:
        st = self.state
        fields = {
            'phi': st.phi.copy(),
            'mu': st.mu.copy(),
            'sigma': st.sigma.copy(),
            'q': st.q.copy(),
            'pressure': recover_physical_pressure(self.grid, st.q, st.phi, self.p),
        }
        ux, vy = self.grid.faces_to_centers(st.v)
        return SnapshotJob(directory=self._path(self.cfg.output.snapshot_dir), step=st.step, t=st.t,
                           grid=self.grid, seed=self.cfg.initial.seed, fields=fields,
                           velocity=(ux.copy(), vy.copy()), fmt=self.cfg.output.format)

    def write_checkpoint(self, name: str) -> Optional[str]:
        if self.out_dir is None:
            return None
        st = self.state
        path = self._path(name)
        arrays = {'phi': st.phi, 'mu': st.mu, 'sigma': st.sigma, 'u': st.v.u, 'v': st.v.v, 'q': st.q}
        meta = {'t': st.t, 'step': st.step, 'dt_prev': self.dt_prev, 'tags': self.tags,
                'bound_warned': self._bound_warned}
        try:
            save_checkpoint(path, arrays, meta, self.series_rows)
        except OSError as e:
            logger.error(f"检查点写出失败: {e}")
            return None
        return path

    def restore(self, path: str):
        """从检查点恢复状态、步长历史与已写出的时间序列"""
        arrays, meta, rows = load_checkpoint(path)
        state = SimState(t=float(meta['t']), step=int(meta['step']), phi=arrays['phi'], mu=arrays['mu'],
                         sigma=arrays['sigma'], v=MacVelocity(arrays['u'], arrays['v']), q=arrays['q'])
        if state.phi.shape != self.grid.shape:
            raise ValueError(f"检查点网格 {state.phi.shape} 与配置 {self.grid.shape} 不符")
        state.report = total_energy(self.grid, state, self.p)
        self.state = state
        self.dt_prev = None if meta.get('dt_prev') is None else float(meta['dt_prev'])
        self._bound_warned = bool(meta.get('bound_warned', False))
        self.tags = sorted(set(self.tags) | set(meta.get('tags', [])) | {"restarted"})
        self.series_rows = rows
        logger.info(f"已从检查点恢复: t={state.t:g}, step={state.step}")

    def _log_progress(self, outcome: StepOutcome):
        every = self.cfg.output.log_every
        row = outcome.row
        message = (f"step={self.state.step} t={row['t']:.6g} dt={row['dt']:.3e} E={row['E_total']:.10g} "
                   f"imbalance={row['imbalance']:.3e} div={row['div_max']:.2e} iters={row['krylov_iters']}")
        if every and self.state.step % every == 0:
            logger.info(message)
        else:
            logger.debug(message)

    # -- 主循环 --------------------------------------------------------

    def run(self, t_end: Optional[float] = None) -> RunReport:
        """
        推进到 t_end（默认 time.T_end）

        Raises:
            SimulationAborted: 步进失败或输出失败（均已写检查点）
        """
        t_end = self.cfg.time.T_end if t_end is None else t_end
        start = time.perf_counter()
        writing = self.out_dir is not None
        snap_every = self.cfg.output.snapshot_every

        try:
            if writing:
                os.makedirs(self.out_dir, exist_ok=True)
                write_series_header(self.series_path)
                for row in self.series_rows:
                    write_series_row(row, self.series_path)
                self.writer = SnapshotWriter()
                self.writer.start()
                if self.state.step == 0:
                    self.writer.submit(self.snapshot_job())

            while self.state.t < t_end * (1.0 - 1e-12):
                outcome = self.step(t_end)
                self._log_progress(outcome)
                if writing:
                    write_series_row(outcome.row, self.series_path)
                    if snap_every and self.state.step % snap_every == 0:
                        self.writer.submit(self.snapshot_job())

            checkpoint, snapshots = None, 0
            if writing:
                if not (snap_every and self.state.step % snap_every == 0) and self.state.step > 0:
                    self.writer.submit(self.snapshot_job())
                self.writer.close()
                snapshots = self.writer.get_statistics()['snapshots_written']
                checkpoint = self.write_checkpoint("checkpoint_final.npz")
        except OSError as e:
            checkpoint = self.write_checkpoint("checkpoint_abort.npz")
            raise SimulationAborted(f"输出失败: {e}", checkpoint=checkpoint) from e
        finally:
            if self.writer is not None and self.writer.is_alive():
                try:
                    self.writer.close(timeout=5.0)
                except OSError:
                    pass

        wall = time.perf_counter() - start
        rows = self.series_rows[1:]
        report = RunReport(
            steps=self.state.step,
            t_final=self.state.t,
            wall_time=wall,
            tags=sorted(set(self.tags)),
            max_imbalance=max((abs(r['imbalance']) for r in rows), default=0.0),
            max_mass_residual=max((max(abs(r['mass_phi']), abs(r['mass_sigma'])) for r in rows), default=0.0),
            max_div=max((r['div_max'] for r in self.series_rows), default=0.0),
            series_path=self.series_path,
            checkpoint=checkpoint,
            snapshots_written=snapshots,
        )
        if writing:
            report.manifest = write_manifest(self._path("manifest.json"), self.config_text, wall,
                                             report.steps, report.t_final, report.tags,
                                             extra={'seed': self.cfg.initial.seed})
        logger.info(f"运行结束: {report.steps} 步, t={report.t_final:g}, 用时 {wall:.2f}s, "
                    f"max|imbalance|={report.max_imbalance:.3e}, 快照 {report.snapshots_written} 个")
        return report

    def health(self) -> HealthReport:
        """最近一个被接受步的健康状态；尚未推进时按初值计算"""
        if self.last_health is not None:
            return self.last_health
        return health(self.grid, self.state, self.cfg.time.dt_init, 1.0, s_max=self.p.potential.s_max)


def run_simulation(cfg: SimConfig, out_dir: Optional[str] = ".", restart: Optional[str] = None,
                   config_text: Optional[str] = None, t_end: Optional[float] = None) -> RunReport:
    """
    校验配置并运行

    Raises:
        ValidationError: 结构性假设不满足且未覆盖
        SimulationAborted: 运行中止
    """
    report = check_validation(cfg)
    sim = Simulation(cfg, out_dir=out_dir, config_text=config_text)
    if not report.passed:
        sim.tags.append("validation_overridden")
    if restart:
        sim.restore(restart)
    return sim.run(t_end)
