import os

import numpy as np
import pytest

from core.grid import Grid2D
from workers.snapshot_writer import SnapshotJob, SnapshotWriter


GRID = Grid2D(8, 8)


def job(directory: str, step: int) -> SnapshotJob:
    return SnapshotJob(directory=directory, step=step, t=0.1 * step, grid=GRID, seed=0,
                       fields={'phi': np.full(GRID.shape, float(step))},
                       velocity=(np.zeros(GRID.shape), np.zeros(GRID.shape)), fmt="csv")


def test_writes_all_submitted_snapshots(tmp_path):
    writer = SnapshotWriter(queue_size=2)
    writer.start()
    for step in range(5):
        writer.submit(job(str(tmp_path), step))
    writer.close(timeout=10)
    stats = writer.get_statistics()
    assert stats['snapshots_written'] == 5
    assert stats['files_written'] == 15
    assert stats['errors'] == 0
    assert not stats['is_running']
    assert os.path.exists(tmp_path / "phi_000004.csv")


def test_write_errors_surface_on_close(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    writer = SnapshotWriter()
    writer.start()
    writer.submit(job(str(blocker), 0))
    with pytest.raises(OSError):
        writer.close(timeout=10)
    assert writer.get_statistics()['errors'] == 1


def test_submit_requires_running_thread(tmp_path):
    with pytest.raises(RuntimeError):
        SnapshotWriter().submit(job(str(tmp_path), 0))
