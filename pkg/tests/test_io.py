import json
import os

import numpy as np
import pytest

from core.grid import Grid2D
from core.io import (
    SERIES_COLUMNS, SNAPSHOT_HEADER, VTK_HEADER, config_digest, load_checkpoint, read_series, read_snapshot,
    save_checkpoint, write_field_csv, write_manifest, write_series_header, write_series_row, write_snapshot,
)


GRID = Grid2D(8, 12, lx=1.0, ly=1.5)


def series_row(k: int) -> dict:
    row = {column: 0.1 * k + i for i, column in enumerate(SERIES_COLUMNS)}
    row['krylov_iters'] = 3 * k
    return row


def test_csv_round_trip_is_bit_identical(tmp_path):
    values = np.random.default_rng(0).standard_normal(GRID.shape) * 1e3
    path = write_field_csv(str(tmp_path / "phi.csv"), "phi", values, 0.125, GRID, 42)
    snap = read_snapshot(path)
    np.testing.assert_array_equal(snap.values, values)
    assert (snap.field, snap.t, snap.nx, snap.ny, snap.seed) == ("phi", 0.125, 8, 12, 42)
    assert snap.ly == 1.5
    with open(path) as f:
        assert f.readline().strip() == SNAPSHOT_HEADER


def test_read_snapshot_rejects_foreign_files(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("1,2,3\n")
    with pytest.raises(ValueError):
        read_snapshot(str(path))


def test_read_snapshot_rejects_shape_mismatch(tmp_path):
    path = write_field_csv(str(tmp_path / "phi.csv"), "phi", np.ones((8, 12)), 0.0, GRID, 0)
    text = open(path).read().replace("# phi,0,8,12", "# phi,0,9,12")
    with open(path, "w") as f:
        f.write(text)
    with pytest.raises(ValueError):
        read_snapshot(path)


def test_csv_snapshot_writes_every_field(tmp_path):
    fields = {name: np.zeros(GRID.shape) for name in ("phi", "mu", "sigma", "q", "pressure")}
    paths = write_snapshot(str(tmp_path), 7, 0.5, GRID, 1, fields, (np.ones(GRID.shape), np.zeros(GRID.shape)), "csv")
    names = sorted(os.path.basename(p) for p in paths)
    assert names == sorted(f"{n}_000007.csv" for n in ("phi", "mu", "sigma", "q", "pressure", "vel_x", "vel_y"))


def test_vtk_snapshot(tmp_path):
    phi = np.arange(GRID.nx * GRID.ny, dtype=float).reshape(GRID.shape)
    paths = write_snapshot(str(tmp_path), 0, 0.0, GRID, 1, {"phi": phi},
                           (np.zeros(GRID.shape), np.zeros(GRID.shape)), "vtk")
    lines = open(paths[0]).read().splitlines()
    assert lines[0] == VTK_HEADER == "# vtk DataFile Version 3.0"
    assert lines[2:4] == ["ASCII", "DATASET STRUCTURED_POINTS"]
    assert "DIMENSIONS 8 12 1" in lines
    assert f"POINT_DATA {8 * 12}" in lines
    start = lines.index("LOOKUP_TABLE default") + 1
    # x 下标变化最快
    assert [float(x) for x in lines[start:start + 2]] == [phi[0, 0], phi[1, 0]]


def test_unknown_snapshot_format(tmp_path):
    with pytest.raises(ValueError):
        write_snapshot(str(tmp_path), 0, 0.0, GRID, 1, {}, (np.zeros(GRID.shape), np.zeros(GRID.shape)), "hdf5")


def test_series_rows(tmp_path):
    path = str(tmp_path / "out" / "series.csv")
    write_series_header(path)
    for k in range(4):
        write_series_row(series_row(k), path)
    lines = open(path).read().splitlines()
    assert lines[0] == ",".join(SERIES_COLUMNS)
    assert len(lines) == 5
    data = read_series(path)
    np.testing.assert_array_equal(data['krylov_iters'], [0, 3, 6, 9])
    assert data['E_total'][2] == pytest.approx(0.2 + 2)


def test_series_row_creates_header(tmp_path):
    path = str(tmp_path / "series.csv")
    write_series_row(series_row(1), path)
    assert open(path).readline().startswith("t,dt,E_total")


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    arrays = {'phi': rng.standard_normal(GRID.shape), 'u': rng.standard_normal((9, 12))}
    meta = {'t': 0.25, 'step': 10, 'tags': ["restarted"]}
    rows = [series_row(k) for k in range(3)]
    path = str(tmp_path / "ckpt.npz")
    save_checkpoint(path, arrays, meta, rows)
    loaded, loaded_meta, loaded_rows = load_checkpoint(path)
    np.testing.assert_array_equal(loaded['phi'], arrays['phi'])
    np.testing.assert_array_equal(loaded['u'], arrays['u'])
    assert loaded_meta == meta
    assert loaded_rows == [{k: float(v) for k, v in r.items()} for r in rows]


def test_manifest(tmp_path):
    path = str(tmp_path / "manifest.json")
    manifest = write_manifest(path, "grid.nx = 8\n", 1.5, 10, 0.1, ["b", "a", "a"], extra={'seed': 3})
    on_disk = json.load(open(path))
    assert on_disk == manifest
    assert manifest['config_sha256'] == config_digest("grid.nx = 8\n")
    assert len(manifest['config_sha256']) == 64
    assert manifest['tags'] == ["a", "b"]
    assert manifest['version']
    assert config_digest("a") != config_digest("b")
