#!/usr/bin/env python3
"""
命令行入口 - 运行模拟与验证研究

用法:
    python nsch.py run --config configs/disk_proliferation.cfg --out output
    python nsch.py validate-config --config configs/default.cfg
    python nsch.py verify-energy | verify-convergence | verify-oracle | verify-perturbation

退出码: 0 全部通过; 1 断言或参数校验失败; 2 配置/用法错误; 3 运行中止
"""
import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from core.config_loader import SimConfig, load_config
from core.errors import ConfigError, SimulationAborted, SourceError, ValidationError
from core.model import validate_params
from workers import verification
from workers.simulation import run_simulation


logger = logging.getLogger("nsch")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_ABORTED = 3


def _banner(title: str):
    print("=" * 70)
    print(title)
    print("=" * 70)


def _verdict(passed: bool, message: str) -> int:
    print(f"{'✓' if passed else '❌'} {message}")
    return EXIT_OK if passed else EXIT_FAILED


def _load(args, validate: bool = False) -> SimConfig:
    """读取 --config 并应用命令行覆盖项"""
    override = True if getattr(args, "override_validation", False) else None
    cfg = load_config(args.config, override_validation=override, validate=validate)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.override({"initial.seed": args.seed})
    return cfg


# ----------------------------------------------------------------------
# 子命令
# ----------------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = _load(args)
    with open(args.config, "r", encoding="utf-8") as f:
        config_text = f.read()
    report = run_simulation(cfg, out_dir=args.out, restart=args.restart, config_text=config_text,
                            t_end=args.until)
    _banner("运行完成")
    print(json.dumps(report.to_dict(), indent=2, ensure_ascii=False))
    return EXIT_OK


def cmd_validate_config(args) -> int:
    cfg = _load(args)
    report = validate_params(cfg.params)
    _banner(f"参数校验: {args.config}")
    for key, value in sorted(report.checks.items()):
        print(f"  {key:24s} = {value:.6g}")
    for message in report.failures:
        print(f"❌ {message}")
    if report.passed:
        return _verdict(True, "全部结构性假设满足")
    if cfg.solver.override_validation:
        print("⚠️  校验失败但已设置 override_validation")
        return EXIT_OK
    return EXIT_FAILED


def cmd_verify_energy(args) -> int:
    if args.config:
        cfg = _load(args)
    else:
        cfg = verification.acceptance_energy_config(n=args.n, t_end=args.T)
    code = EXIT_OK

    if not args.skip_monotonicity:
        audit_updates = {"params.chi": 0.0, "sources.kind": "zero", "solver.flow": False}
        if not args.config:
            # 单调性检查用零均值的随机扰动初值
            audit_updates.update({"initial.kind": "random", "initial.mean": 0.0})
        audit_cfg = cfg.override(audit_updates)
        audit = verification.energy_monotonicity_audit(audit_cfg, steps=args.steps)
        _banner("无源能量单调性")
        print(f"  步数 {len(audit.energies) - 1}, max (E_n+1 - E_n)/E_0 = {audit.max_increase:.3e}")
        code |= _verdict(audit.passed, f"能量单调不增（容差 {audit.tolerance:g}）")

    study = verification.energy_residual_study(cfg, dts=args.dts, t_end=args.T)
    _banner("能量恒等式残差")
    print(study.format())
    code |= _verdict(study.passed, "残差随 dt 一阶收敛")
    mass_ok = study.max_mass_residual <= 10.0 * cfg.solver.krylov_tol
    code |= _verdict(mass_ok, f"质量平衡残差 <= 10 krylov_tol = {10.0 * cfg.solver.krylov_tol:g}")
    return code


def cmd_verify_convergence(args) -> int:
    _banner("制造解空间收敛")
    space = verification.manufactured_solution_study(args.resolutions, t_end=args.T, dt_rule=args.dt_rule)
    print(space.format())
    code = _verdict(space.passed, "空间阶 2.0 ± 0.2")
    tables = {"space": space}

    if not args.skip_temporal:
        _banner("制造解时间收敛")
        temporal = verification.temporal_order_study(n=args.temporal_n, t_end=args.T)
        print(temporal.format())
        code |= _verdict(temporal.passed, "时间阶 1.0 ± 0.2")
        tables["time"] = temporal

    if args.out:
        os.makedirs(args.out, exist_ok=True)
        for name, table in tables.items():
            path = os.path.join(args.out, f"convergence_{name}.csv")
            table.to_csv(path)
            print(f"  表格已写入 {path}")
    return code


def cmd_verify_oracle(args) -> int:
    _banner("一维界面剖面")
    oracle = verification.tanh_profile_oracle(args.epsilon, args.beta, args.points)
    for key, value in oracle.to_dict().items():
        print(f"  {key:20s} = {value:.10g}")
    code = _verdict(oracle.max_error <= 1e-8, f"与 tanh(x/(sqrt2 eps)) 的最大误差 {oracle.max_error:.3e} <= 1e-8")

    if not args.skip_strip:
        _banner("二维条带弛豫")
        strip = verification.strip_relaxation_check(epsilon=args.epsilon, beta=args.beta, nx=args.strip_nx,
                                                    t_end=args.strip_T)
        code |= _verdict(strip.passed, f"截面偏差 {strip.max_deviation:.3e} <= 1e-3 (t={strip.t_final:g})")
    return code


def cmd_verify_perturbation(args) -> int:
    if args.config:
        cfg = _load(args)
    else:
        cfg = verification.acceptance_energy_config(n=args.n, sources=False)
    report = verification.perturbation_growth_test(cfg, deltas=args.deltas, t_end=args.T)
    _banner("连续依赖性")
    print(report.format())
    code = _verdict(report.finite, "轨迹无发散")
    code |= _verdict(report.passed, "d(T) 与 d(0) 线性标度")
    return code


# ----------------------------------------------------------------------
# 参数
# ----------------------------------------------------------------------

def _floats(text: str) -> List[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> List[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nsch", description="Navier-Stokes-Cahn-Hilliard 趋化/传质求解器")
    parser.add_argument("-v", "--verbose", action="store_true", help="DEBUG 级日志")
    parser.add_argument("-q", "--quiet", action="store_true", help="只输出警告与错误")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, config_required: bool):
        p.add_argument("--config", required=config_required, help="配置文件路径")
        p.add_argument("--seed", type=int, help="覆盖 initial.seed")
        p.add_argument("--override-validation", action="store_true", help="参数校验失败时仍继续")

    p = sub.add_parser("run", help="运行一次模拟")
    common(p, True)
    p.add_argument("--out", default="output", help="输出目录")
    p.add_argument("--until", type=float, help="覆盖 time.T_end")
    p.add_argument("--restart", help="从检查点继续")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate-config", help="校验配置的结构性假设")
    common(p, True)
    p.set_defaults(func=cmd_validate_config)

    p = sub.add_parser("verify-energy", help="能量单调性与恒等式残差研究")
    common(p, False)
    p.add_argument("--n", type=int, default=128)
    p.add_argument("--T", type=float, default=0.5)
    p.add_argument("--dts", type=_floats, default=[4e-3, 2e-3, 1e-3])
    p.add_argument("--steps", type=int, default=2000, help="单调性检查的步数")
    p.add_argument("--skip-monotonicity", action="store_true")
    p.set_defaults(func=cmd_verify_energy)

    p = sub.add_parser("verify-convergence", help="制造解收敛研究")
    p.add_argument("--resolutions", type=_ints, default=[32, 64, 128])
    p.add_argument("--dt-rule", choices=["h2", "fixed"], default="h2")
    p.add_argument("--T", type=float, default=0.1)
    p.add_argument("--temporal-n", type=int, default=128)
    p.add_argument("--skip-temporal", action="store_true")
    p.add_argument("--out", help="写出收敛表 CSV 的目录")
    p.set_defaults(func=cmd_verify_convergence)

    p = sub.add_parser("verify-oracle", help="一维界面剖面与条带弛豫")
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--points", type=int, default=8001)
    p.add_argument("--strip-nx", type=int, default=256)
    p.add_argument("--strip-T", type=float, default=1.0)
    p.add_argument("--skip-strip", action="store_true")
    p.set_defaults(func=cmd_verify_oracle)

    p = sub.add_parser("verify-perturbation", help="连续依赖性（扰动增长）")
    common(p, False)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--T", type=float, default=0.25)
    p.add_argument("--deltas", type=_floats, default=[1e-4, 5e-5, 2.5e-5])
    p.set_defaults(func=cmd_verify_perturbation)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format='%(asctime)s [%(levelname)s] %(name)s: %(message)s')

    try:
        return args.func(args)
    except (ConfigError, SourceError) as e:
        logger.error(f"❌ 配置错误: {e}")
        return EXIT_CONFIG
    except ValidationError as e:
        logger.error(f"❌ {e}")
        return EXIT_FAILED
    except SimulationAborted as e:
        logger.error(f"❌ 运行中止: {e}（检查点: {e.checkpoint}）")
        return EXIT_ABORTED
    except (ValueError, OSError) as e:
        logger.error(f"❌ 输入无效: {e}")
        return EXIT_CONFIG


if __name__ == '__main__':
    sys.exit(main())
