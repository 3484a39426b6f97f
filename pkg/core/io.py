"""
文件输入输出 - 场快照（CSV / 旧式 VTK）、时间序列 CSV、检查点与运行清单
"""
import hashlib
import json
import logging
import os
import subprocess
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

import config
from core.grid import Grid2D


logger = logging.getLogger(__name__)

SNAPSHOT_HEADER = "# field,t,nx,ny,Lx,Ly,seed"
VTK_HEADER = "# vtk DataFile Version 3.0"
SNAPSHOT_FORMATS = ("csv", "vtk")

SERIES_COLUMNS = (
    "t", "dt", "E_total", "E_kin", "E_gl", "E_chem",
    "D_mu", "D_sigma", "D_visc", "W_sources", "imbalance",
    "mass_phi", "mass_sigma", "div_max", "krylov_iters",
)


@dataclass
class Snapshot:
    """一个标量场快照及其头信息"""
    field: str
    t: float
    nx: int
    ny: int
    lx: float
    ly: float
    seed: int
    values: np.ndarray


def _fmt(x: float) -> str:
    return "%.17g" % x


def write_field_csv(path: str, field: str, values: np.ndarray, t: float, grid: Grid2D, seed: int) -> str:
    """
    写单个场：两行头 + nx 行、每行 ny 个值（%.17g，可无损回读）
    """
    meta = ",".join([field, _fmt(t), str(grid.nx), str(grid.ny), _fmt(grid.lx), _fmt(grid.ly), str(seed)])
    with open(path, "w") as f:
        f.write(SNAPSHOT_HEADER + "\n")
        f.write("# " + meta + "\n")
        np.savetxt(f, values, fmt="%.17g", delimiter=",")
    return path


def read_snapshot(path: str) -> Snapshot:
    """
    读取 write_field_csv 写出的文件

    Raises:
        ValueError: 头格式错误或数值形状与头不符
    """
    with open(path, "r") as f:
        first = f.readline().strip()
        second = f.readline().strip()
    if first != SNAPSHOT_HEADER or not second.startswith("#"):
        raise ValueError(f"{path}: 不是快照文件（头部: {first!r}）")
    parts = [x.strip() for x in second.lstrip("#").split(",")]
    if len(parts) != 7:
        raise ValueError(f"{path}: 头信息字段数为 {len(parts)}，应为 7")
    field, t, nx, ny, lx, ly, seed = parts
    values = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    snap = Snapshot(field=field, t=float(t), nx=int(nx), ny=int(ny), lx=float(lx), ly=float(ly),
                    seed=int(seed), values=values)
    if values.shape != (snap.nx, snap.ny):
        raise ValueError(f"{path}: 数值形状 {values.shape} 与头信息 ({snap.nx}, {snap.ny}) 不符")
    return snap


def write_vtk(path: str, fields: Dict[str, np.ndarray], velocity: Tuple[np.ndarray, np.ndarray],
              t: float, grid: Grid2D, seed: int) -> str:
    """旧式 ASCII STRUCTURED_POINTS：全部标量场 + 单元中心平均速度"""
    n = grid.nx * grid.ny
    lines = [
        VTK_HEADER,
        f"nsch t={_fmt(t)} seed={seed}",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {grid.nx} {grid.ny} 1",
        f"ORIGIN {_fmt(0.5 * grid.hx)} {_fmt(0.5 * grid.hy)} 0",
        f"SPACING {_fmt(grid.hx)} {_fmt(grid.hy)} 1",
        f"POINT_DATA {n}",
    ]
    # VTK 点序 x 最快
    for name, values in fields.items():
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(_fmt(x) for x in values.T.ravel())
    ux, vy = velocity
    lines.append("VECTORS velocity double")
    lines.extend(f"{_fmt(a)} {_fmt(b)} 0" for a, b in zip(ux.T.ravel(), vy.T.ravel()))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
    return path


def write_snapshot(directory: str, step: int, t: float, grid: Grid2D, seed: int,
                   fields: Dict[str, np.ndarray], velocity: Tuple[np.ndarray, np.ndarray],
                   fmt: str = config.OUTPUT_FORMAT) -> List[str]:
    """
    写一个时刻的快照

    Args:
        fields: 名称 -> 单元中心标量场（phi, mu, sigma, q, pressure）
        velocity: 单元中心平均速度 (vel_x, vel_y)
        fmt: 'csv'（每场一个文件）或 'vtk'（单文件）

    Returns:
        写出的文件路径列表
    """
    if fmt not in SNAPSHOT_FORMATS:
        raise ValueError(f"未知快照格式: {fmt}")
    os.makedirs(directory, exist_ok=True)
    if fmt == "vtk":
        return [write_vtk(os.path.join(directory, f"state_{step:06d}.vtk"), fields, velocity, t, grid, seed)]
    all_fields = dict(fields)
    all_fields["vel_x"], all_fields["vel_y"] = velocity
    return [write_field_csv(os.path.join(directory, f"{name}_{step:06d}.csv"), name, values, t, grid, seed)
            for name, values in all_fields.items()]


def format_series_row(row: Dict[str, float]) -> str:
    cells = []
    for column in SERIES_COLUMNS:
        value = row[column]
        cells.append(str(int(value)) if column == "krylov_iters" else _fmt(float(value)))
    return ",".join(cells)


def write_series_header(path: str):
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w") as f:
        f.write(",".join(SERIES_COLUMNS) + "\n")


def write_series_row(row: Dict[str, float], path: str):
    """追加一行；文件不存在时先写表头"""
    if not os.path.exists(path):
        write_series_header(path)
    with open(path, "a") as f:
        f.write(format_series_row(row) + "\n")


def read_series(path: str) -> Dict[str, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {column: data[:, k] for k, column in enumerate(SERIES_COLUMNS)}


def save_checkpoint(path: str, arrays: Dict[str, np.ndarray], meta: dict, series_rows: Sequence[Dict[str, float]]):
    """numpy 归档：场数组 + JSON 元信息 + 已写出的时间序列行"""
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    series = np.array([[row[c] for c in SERIES_COLUMNS] for row in series_rows], dtype=float).reshape(-1, len(SERIES_COLUMNS))
    np.savez(path, meta=np.array(json.dumps(meta, sort_keys=True)), series=series, **arrays)
    logger.info(f"检查点已写入: {path}")


def load_checkpoint(path: str) -> Tuple[Dict[str, np.ndarray], dict, List[Dict[str, float]]]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        series = data["series"]
        arrays = {k: data[k].copy() for k in data.files if k not in ("meta", "series")}
    rows = [dict(zip(SERIES_COLUMNS, map(float, r))) for r in series]
    return arrays, meta, rows


def version_string() -> str:
    """git describe（可用时），否则包版本号"""
    try:
        res = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            check=False,
            cwd=os.path.dirname(os.path.abspath(__file__)),
        )
        if res.returncode == 0 and res.stdout.strip():
            return res.stdout.strip()
    except (FileNotFoundError, OSError):
        pass
    return config.VERSION


def config_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_manifest(path: str, config_text: str, wall_time: float, steps: int, t_final: float,
                   tags: Sequence[str], extra: Optional[dict] = None) -> dict:
    manifest = {
        'config_sha256': config_digest(config_text),
        'version': version_string(),
        'wall_time_s': wall_time,
        'steps': steps,
        't_final': t_final,
        'tags': sorted(set(tags)),
    }
    if extra:
        manifest.update(extra)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return manifest
