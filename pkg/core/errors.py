"""
异常类型

所有对外抛出的异常都继承自 NschError，命令行入口据此映射退出码。
"""
from typing import Optional


class NschError(Exception):
    """求解器异常基类"""


class ConfigError(NschError):
    """配置文件解析失败（带行号或键名）"""

    def __init__(self, message: str, line: Optional[int] = None, key: Optional[str] = None):
        self.line = line
        self.key = key
        if line is not None:
            message = f"第 {line} 行: {message}"
        super().__init__(message)


class ValidationError(NschError):
    """结构性假设校验失败，携带完整的校验报告"""

    def __init__(self, report):
        self.report = report
        super().__init__("参数校验失败: " + "; ".join(report.failures))


class StepFailure(NschError):
    """单个时间步失败（Krylov 不收敛、出现 NaN、散度超限）"""

    def __init__(self, stage: str, message: str, residual: float = float("nan"), iterations: int = 0):
        self.stage = stage
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"[{stage}] {message} (残差={residual:.3e}, 迭代={iterations})")


class SimulationAborted(NschError):
    """重试耗尽后中止，已写出检查点"""

    def __init__(self, message: str, checkpoint: Optional[str] = None):
        self.checkpoint = checkpoint
        super().__init__(message)


class SourceError(NschError):
    """源项规格或预设场文件无效"""
