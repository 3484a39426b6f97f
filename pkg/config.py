"""
配置文件 - 求解器默认参数

所有可在配置文件（``section.key = value``）中覆盖的键，其默认值都集中在这里。
"""
import os

# 版本号（无法获取 git 描述时写入运行清单）
VERSION = "0.3.0"

# 网格默认值
GRID_NX = 64
GRID_NY = 64
GRID_LX = 1.0
GRID_LY = 1.0
GRID_BC = "neumann"  # neumann（齐次 Neumann + 无滑移）或 periodic
GRID_MIN_CELLS = 8

# 物理参数默认值
PARAM_A = 1.0
PARAM_B = 0.01
PARAM_CHI = 0.0

# 势函数工作区间与采样密度
POTENTIAL_S_MAX = 2.0
POTENTIAL_SAMPLES = 20001
CERTIFY_TOL = 1e-12  # 采样校验中允许的舍入误差

# 四次双阱势 1/4 (s^2 - 1)^2 的增长常数
QUARTIC_C0 = 3.0
QUARTIC_C1 = 4.0
QUARTIC_C2 = 2.0
QUARTIC_C3 = 0.125
QUARTIC_C4 = 9.0 / 64.0
QUARTIC_R = 2.0
QUARTIC_STABILIZATION = 11.0  # [-2, 2] 上 Psi'' 的上确界

# Krylov 求解器
KRYLOV_TOL = 1e-9
KRYLOV_MAXIT = 500
GMRES_RESTART = 50
POISSON_TOL = 1e-12
DIV_REL_TOL = 1e-8

# 时间步控制
TIME_T_END = 0.1
TIME_DT_INIT = 1e-3
TIME_DT_MIN = 1e-3
TIME_DT_MAX = 1e-3
TIME_CFL_SAFETY = 0.5
TIME_GROWTH = 1.2
MAX_STEP_RETRIES = 5
CROSS_TERM_FACTOR = 0.25
MACHINE_GUARD = 1e-300

# 输出
OUTPUT_SNAPSHOT_EVERY = 0  # 0 表示只写初始与最终快照
OUTPUT_SERIES_PATH = "series.csv"
OUTPUT_SNAPSHOT_DIR = "snapshots"
OUTPUT_FORMAT = "csv"
OUTPUT_LOG_EVERY = 100
SNAPSHOT_QUEUE_SIZE = 8

# 初始条件
INITIAL_SEED = 12345
INITIAL_SMOOTHING_STEPS = 4
INITIAL_MODES = 2  # modes 预设：每个方向的最高余弦模式数

# 并行：NSCH_THREADS 限制 FFT 工作线程数（默认使用全部核心）
FFT_WORKERS = int(os.environ.get("NSCH_THREADS", "0")) or -1
