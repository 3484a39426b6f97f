"""
运行配置加载

文件格式为逐行的 ``section.key = value``，``#`` 开头为注释，列表用逗号分隔。
未知键是硬错误（附最相近的合法键）；未出现的键取 config.py 中的默认值。
"""
import difflib
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Tuple

import config
from core.errors import ConfigError, ValidationError
from core.grid import Grid2D
from core.model import CoeffSpec, ModelParams, PotentialSpec, epsilon_beta_map, validate_params
from core.sources import SourceSpec


logger = logging.getLogger(__name__)

INITIAL_KINDS = ("uniform", "random", "modes", "disk", "strip", "file")


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"不是布尔值: {text!r}")


def _parse_floats(text: str) -> Tuple[float, ...]:
    items = [x.strip() for x in text.split(",") if x.strip()]
    if not items:
        raise ValueError("列表为空")
    return tuple(float(x) for x in items)


def _parse_optional_float(text: str) -> Optional[float]:
    return None if not text.strip() else float(text)


def _parse_int(text: str) -> int:
    value = float(text)
    if value != int(value):
        raise ValueError(f"不是整数: {text!r}")
    return int(value)


def _fmt_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(float(x)) for x in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coeff_keys(section: str) -> Dict[str, Tuple[Callable, Any]]:
    return {
        f"{section}.kind": (str, "constant"),
        f"{section}.lower": (float, 1.0),
        f"{section}.upper": (float, 1.0),
        f"{section}.coefficients": (_parse_floats, (1.0,)),
    }


# 键 -> (解析函数, 默认值)；顺序即 save_config 的规范顺序
KEY_SPECS: Dict[str, Tuple[Callable, Any]] = {
    "grid.nx": (_parse_int, config.GRID_NX),
    "grid.ny": (_parse_int, config.GRID_NY),
    "grid.Lx": (float, config.GRID_LX),
    "grid.Ly": (float, config.GRID_LY),
    "grid.bc": (str, config.GRID_BC),
    "params.A": (float, config.PARAM_A),
    "params.B": (float, config.PARAM_B),
    "params.chi": (float, config.PARAM_CHI),
    "params.beta": (_parse_optional_float, None),
    "params.epsilon": (_parse_optional_float, None),
    "potential.kind": (str, "quartic"),
    "potential.coefficients": (_parse_floats, (0.25, 0.0, -0.5, 0.0, 0.25)),
    "potential.C0": (float, config.QUARTIC_C0),
    "potential.C1": (float, config.QUARTIC_C1),
    "potential.C2": (float, config.QUARTIC_C2),
    "potential.C3": (float, config.QUARTIC_C3),
    "potential.C4": (float, config.QUARTIC_C4),
    "potential.r": (float, config.QUARTIC_R),
    "potential.s_max": (float, config.POTENTIAL_S_MAX),
    "potential.stabilization": (float, config.QUARTIC_STABILIZATION),
    **_coeff_keys("mobility_m"),
    **_coeff_keys("mobility_n"),
    **_coeff_keys("viscosity"),
    "sources.kind": (str, "zero"),
    "sources.proliferation": (float, 0.0),
    "sources.apoptosis": (float, 0.0),
    "sources.consumption": (float, 0.0),
    "sources.growth_cap": (float, 1.0),
    "sources.path": (str, ""),
    "initial.kind": (str, "random"),
    "initial.path": (str, ""),
    "initial.value": (float, 0.0),
    "initial.mean": (float, 0.0),
    "initial.amplitude": (float, 0.05),
    "initial.seed": (_parse_int, config.INITIAL_SEED),
    "initial.radius": (float, 0.25),
    "initial.width": (float, 0.02),
    "initial.sigma_value": (float, 0.0),
    "initial.sigma_amplitude": (float, 0.0),
    "initial.modes": (_parse_int, config.INITIAL_MODES),
    "time.T_end": (float, config.TIME_T_END),
    "time.dt_init": (float, config.TIME_DT_INIT),
    "time.dt_min": (float, config.TIME_DT_MIN),
    "time.dt_max": (float, config.TIME_DT_MAX),
    "time.cfl_safety": (float, config.TIME_CFL_SAFETY),
    "time.growth": (float, config.TIME_GROWTH),
    "output.snapshot_every": (_parse_int, config.OUTPUT_SNAPSHOT_EVERY),
    "output.series_path": (str, config.OUTPUT_SERIES_PATH),
    "output.snapshot_dir": (str, config.OUTPUT_SNAPSHOT_DIR),
    "output.format": (str, config.OUTPUT_FORMAT),
    "output.log_every": (_parse_int, config.OUTPUT_LOG_EVERY),
    "solver.krylov_tol": (float, config.KRYLOV_TOL),
    "solver.krylov_maxit": (_parse_int, config.KRYLOV_MAXIT),
    "solver.poisson_tol": (float, config.POISSON_TOL),
    "solver.override_validation": (_parse_bool, False),
    "solver.flow": (_parse_bool, True),
}


@dataclass(frozen=True)
class InitialSpec:
    kind: str = "random"
    path: str = ""
    value: float = 0.0
    mean: float = 0.0
    amplitude: float = 0.05
    seed: int = config.INITIAL_SEED
    radius: float = 0.25
    width: float = 0.02
    sigma_value: float = 0.0
    sigma_amplitude: float = 0.0
    modes: int = config.INITIAL_MODES


@dataclass(frozen=True)
class TimeSpec:
    T_end: float = config.TIME_T_END
    dt_init: float = config.TIME_DT_INIT
    dt_min: float = config.TIME_DT_MIN
    dt_max: float = config.TIME_DT_MAX
    cfl_safety: float = config.TIME_CFL_SAFETY
    growth: float = config.TIME_GROWTH

    @property
    def fixed(self) -> bool:
        return self.dt_min == self.dt_max


@dataclass(frozen=True)
class OutputSpec:
    snapshot_every: int = config.OUTPUT_SNAPSHOT_EVERY
    series_path: str = config.OUTPUT_SERIES_PATH
    snapshot_dir: str = config.OUTPUT_SNAPSHOT_DIR
    format: str = config.OUTPUT_FORMAT
    log_every: int = config.OUTPUT_LOG_EVERY


@dataclass(frozen=True)
class SolverSpec:
    krylov_tol: float = config.KRYLOV_TOL
    krylov_maxit: int = config.KRYLOV_MAXIT
    poisson_tol: float = config.POISSON_TOL
    override_validation: bool = False
    flow: bool = True


@dataclass(frozen=True)
class SimConfig:
    """完整运行配置；values 为规范化后的扁平键值，用于保存与哈希"""
    grid: Grid2D
    params: ModelParams
    sources: SourceSpec
    initial: InitialSpec
    time: TimeSpec
    output: OutputSpec
    solver: SolverSpec
    values: Dict[str, Any] = field(default_factory=dict, compare=False)

    def override(self, updates: Dict[str, Any]) -> "SimConfig":
        """返回替换了若干键的新配置（键名同配置文件）"""
        for key in updates:
            if key not in KEY_SPECS:
                raise ConfigError(_unknown_key_message(key), key=key)
        merged = dict(self.values)
        merged.update(updates)
        return from_values(merged)

    def to_text(self) -> str:
        return format_config(self.values)


def _unknown_key_message(key: str) -> str:
    close = difflib.get_close_matches(key, list(KEY_SPECS), n=1, cutoff=0.5)
    hint = f"，是否为 '{close[0]}'?" if close else ""
    return f"未知配置键 '{key}'{hint}"


def parse_config_text(text: str) -> Dict[str, Any]:
    """
    解析配置文本为扁平键值（含默认值）

    Raises:
        ConfigError: 语法错误、未知键或值无法解析，均带行号
    """
    values = {key: default for key, (_, default) in KEY_SPECS.items()}
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"缺少 '=': {raw.strip()!r}", line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEY_SPECS:
            raise ConfigError(_unknown_key_message(key), line=lineno, key=key)
        if key in seen:
            raise ConfigError(f"键 '{key}' 重复（首次出现在第 {seen[key]} 行）", line=lineno, key=key)
        seen[key] = lineno
        parser, _ = KEY_SPECS[key]
        try:
            values[key] = parser(value)
        except ValueError as e:
            raise ConfigError(f"键 '{key}' 的值无效: {e}", line=lineno, key=key) from e
    return values


def _coeff(values: Dict[str, Any], section: str) -> CoeffSpec:
    kind = values[f"{section}.kind"]
    if kind == "clamped-polynomial":
        kind = "polynomial"
    lower, upper = values[f"{section}.lower"], values[f"{section}.upper"]
    coefficients = values[f"{section}.coefficients"]
    if kind == "constant" and lower == upper:
        coefficients = (lower,)
    return CoeffSpec(kind=kind, lower_bound=lower, upper_bound=upper, coefficients=coefficients)


def from_values(values: Dict[str, Any]) -> SimConfig:
    """
    由扁平键值构造 SimConfig

    Raises:
        ConfigError: 取值越界或组合不一致
    """
    v = values
    try:
        grid = Grid2D(nx=v["grid.nx"], ny=v["grid.ny"], lx=v["grid.Lx"], ly=v["grid.Ly"], bc=v["grid.bc"])

        A, B = v["params.A"], v["params.B"]
        if (v["params.beta"] is None) != (v["params.epsilon"] is None):
            raise ConfigError("params.beta 与 params.epsilon 必须同时给出")
        if v["params.beta"] is not None:
            A, B = epsilon_beta_map(v["params.beta"], v["params.epsilon"])

        potential = PotentialSpec(
            kind=v["potential.kind"], coefficients=v["potential.coefficients"],
            C0=v["potential.C0"], C1=v["potential.C1"], C2=v["potential.C2"],
            C3=v["potential.C3"], C4=v["potential.C4"], r=v["potential.r"],
            s_max=v["potential.s_max"], stabilization=v["potential.stabilization"],
        )
        params = ModelParams(A=A, B=B, chi=v["params.chi"], domain_size=(grid.lx, grid.ly),
                             potential=potential,
                             mobility_m=_coeff(v, "mobility_m"),
                             mobility_n=_coeff(v, "mobility_n"),
                             viscosity_eta=_coeff(v, "viscosity"))
        sources = SourceSpec(kind=v["sources.kind"], proliferation=v["sources.proliferation"],
                             apoptosis=v["sources.apoptosis"], consumption=v["sources.consumption"],
                             growth_cap=v["sources.growth_cap"], path=v["sources.path"])
    except ValueError as e:
        raise ConfigError(str(e)) from e

    initial = InitialSpec(**{k.split(".", 1)[1]: v[k] for k in KEY_SPECS if k.startswith("initial.")})
    time = TimeSpec(**{k.split(".", 1)[1]: v[k] for k in KEY_SPECS if k.startswith("time.")})
    output = OutputSpec(**{k.split(".", 1)[1]: v[k] for k in KEY_SPECS if k.startswith("output.")})
    solver = SolverSpec(**{k.split(".", 1)[1]: v[k] for k in KEY_SPECS if k.startswith("solver.")})

    if initial.kind not in INITIAL_KINDS:
        raise ConfigError(f"未知初值类型: {initial.kind}（可选 {', '.join(INITIAL_KINDS)}）", key="initial.kind")
    if initial.kind == "file" and not initial.path:
        raise ConfigError("initial.kind = file 需要 initial.path", key="initial.path")
    if initial.modes < 1:
        raise ConfigError(f"initial.modes 至少为 1: {initial.modes}", key="initial.modes")
    if time.T_end < 0:
        raise ConfigError(f"time.T_end 不能为负: {time.T_end}", key="time.T_end")
    if not (0 < time.dt_min <= time.dt_init <= time.dt_max):
        raise ConfigError(f"需要 0 < dt_min <= dt_init <= dt_max，实际 "
                          f"{time.dt_min}, {time.dt_init}, {time.dt_max}", key="time.dt_init")
    if not (0 < time.cfl_safety <= 1 and time.growth >= 1):
        raise ConfigError("需要 0 < cfl_safety <= 1 且 growth >= 1", key="time.cfl_safety")
    if output.format not in ("csv", "vtk"):
        raise ConfigError(f"未知输出格式: {output.format}", key="output.format")
    if output.snapshot_every < 0 or output.log_every < 0:
        raise ConfigError("输出间隔不能为负", key="output.snapshot_every")
    if not (solver.krylov_tol > 0 and solver.krylov_maxit > 0 and solver.poisson_tol > 0):
        raise ConfigError("求解器容差与迭代上限必须为正", key="solver.krylov_tol")

    return SimConfig(grid=grid, params=params, sources=sources, initial=initial, time=time,
                     output=output, solver=solver, values=dict(values))


def check_validation(cfg: SimConfig):
    """
    执行结构性假设校验

    Raises:
        ValidationError: 校验失败且未设置 override_validation
    """
    report = validate_params(cfg.params)
    if not report.passed:
        if not cfg.solver.override_validation:
            raise ValidationError(report)
        logger.warning(f"参数校验失败但已被覆盖: {'; '.join(report.failures)}")
    return report


def load_config(path: str, override_validation: Optional[bool] = None, validate: bool = True) -> SimConfig:
    """
    读取并校验配置文件

    Args:
        path: 配置文件路径
        override_validation: 非 None 时覆盖 solver.override_validation
        validate: 是否执行 validate_params

    Raises:
        ConfigError: 解析失败
        ValidationError: 结构性假设不满足
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"无法读取配置文件 {path}: {e}") from e

    values = parse_config_text(text)
    if override_validation is not None:
        values["solver.override_validation"] = bool(override_validation)
    cfg = from_values(values)
    logger.debug(f"配置已加载: {path}")
    if validate:
        check_validation(cfg)
    return cfg


def format_config(values: Dict[str, Any]) -> str:
    """按规范顺序输出全部键；可选键为 None 时省略"""
    lines = []
    section = None
    for key in KEY_SPECS:
        value = values[key]
        if value is None:
            continue
        current = key.split(".", 1)[0]
        if current != section:
            if section is not None:
                lines.append("")
            lines.append(f"# {current}")
            section = current
        lines.append(f"{key} = {_fmt_value(value)}")
    return "\n".join(lines) + "\n"


def save_config(cfg: SimConfig, path: str):
    with open(path, "w", encoding="utf-8") as f:
        f.write(cfg.to_text())
