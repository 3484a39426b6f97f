"""
快照写出工作线程
时间步进线程把场的拷贝放入有界队列，本线程负责落盘
"""
import logging
import queue
import threading
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

import config
from core.grid import Grid2D
from core.io import write_snapshot


logger = logging.getLogger(__name__)


@dataclass
class SnapshotJob:
    """一个待写出的快照（数组均为拷贝）"""
    directory: str
    step: int
    t: float
    grid: Grid2D
    seed: int
    fields: Dict[str, np.ndarray]
    velocity: Tuple[np.ndarray, np.ndarray]
    fmt: str


class SnapshotWriter(threading.Thread):
    """
    快照写出线程

    队列满时 submit 阻塞等待（不丢快照）；写出错误被记录，
    在 close() 时以 OSError 抛给调用方。
    """

    _STOP = None

    def __init__(self, queue_size: int = config.SNAPSHOT_QUEUE_SIZE):
        super().__init__(daemon=True, name="snapshot-writer")
        self.jobs: "queue.Queue[Optional[SnapshotJob]]" = queue.Queue(maxsize=queue_size)
        self.running = False

        # 统计信息
        self.snapshots_written = 0
        self.files_written: List[str] = []
        self.errors = 0
        self.last_error: Optional[str] = None
        self.lock = threading.Lock()

    def submit(self, job: SnapshotJob):
        if not self.is_alive():
            raise RuntimeError("快照线程未运行")
        self.jobs.put(job)

    def run(self):
        """线程主循环"""
        self.running = True
        logger.debug("快照线程已启动")
        while True:
            job = self.jobs.get()
            try:
                if job is self._STOP:
                    break
                paths = write_snapshot(job.directory, job.step, job.t, job.grid, job.seed,
                                       job.fields, job.velocity, job.fmt)
                with self.lock:
                    self.snapshots_written += 1
                    self.files_written.extend(paths)
                logger.debug(f"快照 step={job.step} 已写出 {len(paths)} 个文件")
            except OSError as e:
                logger.error(f"写快照失败 (step={job.step}): {e}")
                with self.lock:
                    self.errors += 1
                    self.last_error = str(e)
            finally:
                self.jobs.task_done()
        self.running = False
        logger.debug("快照线程已退出")

    def close(self, timeout: Optional[float] = None):
        """
        写完队列中剩余快照并停止线程

        Raises:
            OSError: 期间有快照写出失败
        """
        if self.is_alive():
            self.jobs.put(self._STOP)
            self.join(timeout)
        with self.lock:
            if self.errors:
                raise OSError(f"{self.errors} 个快照写出失败，最后一次: {self.last_error}")

    def get_statistics(self) -> dict:
        """获取统计信息"""
        with self.lock:
            return {
                'is_running': self.running,
                'snapshots_written': self.snapshots_written,
                'files_written': len(self.files_written),
                'errors': self.errors,
                'queue_size': self.jobs.qsize(),
            }
