import os

import numpy as np
import pytest
import scipy.fft

import workers.simulation as simulation
from core.config_loader import from_values, parse_config_text
from core.errors import SimulationAborted, StepFailure, ValidationError
from core.io import read_series
from workers.simulation import Simulation, initial_state, run_simulation


def make_config(**updates):
    values = parse_config_text("grid.nx = 16\ngrid.ny = 16\ntime.T_end = 0.01\n")
    values.update({key.replace("__", "."): value for key, value in updates.items()})
    return from_values(values)


def test_zero_end_time_writes_initial_row_only(tmp_path):
    report = Simulation(make_config(time__T_end=0.0), out_dir=str(tmp_path)).run()
    assert report.steps == 0
    series = read_series(report.series_path)
    assert len(series['t']) == 1
    assert report.snapshots_written == 1
    assert os.path.exists(tmp_path / "manifest.json")
    assert os.path.exists(tmp_path / "snapshots" / "phi_000000.csv")


def test_equilibrium_is_a_fixed_point():
    cfg = make_config(initial__kind="uniform", initial__value=1.0)
    sim = Simulation(cfg)
    report = sim.run()
    assert report.steps == 10
    np.testing.assert_allclose(sim.state.phi, 1.0, atol=1e-12)
    assert sim.state.v.max_abs() <= 1e-12
    assert report.max_imbalance <= 1e-12


def test_initial_conditions():
    disk = initial_state(make_config(initial__kind="disk", initial__radius=0.25, initial__width=0.02))
    assert disk.phi[8, 8] > 0.9 and disk.phi[0, 0] < -0.9
    assert disk.v.max_abs() == 0.0
    a = initial_state(make_config(initial__seed=3)).phi
    b = initial_state(make_config(initial__seed=3)).phi
    c = initial_state(make_config(initial__seed=4)).phi
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


@pytest.mark.parametrize("bc", ["neumann", "periodic"])
def test_low_mode_initial_condition(bc):
    cfg = make_config(grid__bc=bc, initial__kind="modes", initial__mean=-0.8, initial__amplitude=0.05,
                      initial__modes=2, initial__sigma_amplitude=0.1, initial__seed=7)
    state = initial_state(cfg)
    assert np.mean(state.phi) == pytest.approx(-0.8, abs=1e-14)
    assert np.max(np.abs(state.phi + 0.8)) == pytest.approx(0.05)
    assert np.mean(state.sigma) == pytest.approx(0.0, abs=1e-14)
    assert np.max(np.abs(state.sigma)) == pytest.approx(0.1)
    np.testing.assert_array_equal(state.phi, initial_state(cfg).phi)

    # 只含每个方向 0..2 阶的余弦模式
    if bc == "neumann":
        spectrum = np.abs(scipy.fft.dctn(state.phi + 0.8, type=2))
        spectrum[:3, :3] = 0.0
    else:
        spectrum = np.abs(scipy.fft.fft2(state.phi + 0.8))
        low = [0, 1, 2, 14, 15]
        spectrum[np.ix_(low, low)] = 0.0
    assert np.max(spectrum) <= 1e-12


def test_initial_state_from_snapshot_directory(tmp_path):
    Simulation(make_config(initial__kind="disk", time__T_end=0.0), out_dir=str(tmp_path)).run()
    cfg = make_config(initial__kind="file", initial__path=str(tmp_path / "snapshots"))
    state = initial_state(cfg)
    source = initial_state(make_config(initial__kind="disk"))
    np.testing.assert_array_equal(state.phi, source.phi)


def test_file_preset_restores_modified_pressure(tmp_path):
    cfg = make_config(params__A=2.0, params__chi=0.25, initial__kind="disk", initial__width=0.05,
                      initial__sigma_value=1.0, time__T_end=0.005)
    sim = Simulation(cfg, out_dir=str(tmp_path))
    sim.run()
    assert np.max(np.abs(sim.state.q)) > 0.0

    state = initial_state(make_config(params__A=2.0, params__chi=0.25, initial__kind="file",
                                      initial__path=str(tmp_path / "snapshots")))
    np.testing.assert_array_equal(state.phi, sim.state.phi)
    np.testing.assert_allclose(state.q, sim.state.q - np.mean(sim.state.q), rtol=0, atol=1e-10)
    assert state.v.max_abs() == 0.0


def test_proliferation_grows_tumour():
    cfg = make_config(params__A=2.0, params__chi=0.25, sources__kind="proliferation",
                      sources__proliferation=1.0, sources__apoptosis=0.1, sources__consumption=0.5,
                      initial__kind="disk", initial__width=0.05, initial__sigma_value=1.0,
                      time__T_end=0.02, time__dt_min=1e-6, time__dt_init=1e-4)
    sim = Simulation(cfg)
    start = sim.grid.mean(sim.state.phi)
    report = sim.run()
    assert sim.grid.mean(sim.state.phi) > start
    assert sim.grid.mean(sim.state.sigma) < 1.0
    assert report.max_mass_residual <= 1e-8
    assert "state_dependent_sources" in report.tags
    # 工作区间 |phi| <= 2、sigma <= 1 上的解析常数
    assert sim.source_lipschitz == pytest.approx((3.0, 0.75))


def test_runs_are_deterministic(tmp_path):
    cfg = make_config(params__A=2.0, params__chi=0.25, initial__sigma_value=1.0, initial__sigma_amplitude=0.1)
    first = Simulation(cfg, out_dir=str(tmp_path / "a")).run()
    second = Simulation(cfg, out_dir=str(tmp_path / "b")).run()
    with open(first.series_path, "rb") as f1, open(second.series_path, "rb") as f2:
        assert f1.read() == f2.read()


def test_restart_matches_unbroken_run(tmp_path):
    cfg = make_config(params__A=2.0, params__chi=0.25, initial__sigma_value=1.0, initial__sigma_amplitude=0.1,
                      time__T_end=0.01)
    unbroken = Simulation(cfg)
    unbroken.run()

    first = Simulation(cfg, out_dir=str(tmp_path / "first"))
    report = first.run(t_end=0.005)
    resumed = Simulation(cfg, out_dir=str(tmp_path / "second"))
    resumed.restore(report.checkpoint)
    final = resumed.run()

    assert final.steps == unbroken.state.step
    assert "restarted" in final.tags
    np.testing.assert_allclose(resumed.state.phi, unbroken.state.phi, rtol=0, atol=1e-13)
    np.testing.assert_allclose(resumed.state.sigma, unbroken.state.sigma, rtol=0, atol=1e-13)
    assert len(read_series(final.series_path)['t']) == final.steps + 1


def test_run_tags():
    sim = Simulation(make_config(solver__flow=False))
    assert "flow_disabled" in sim.tags

    # 16x16、chi = 0.25 时交叉项界约为 3.9e-3
    sim = Simulation(make_config(params__A=2.0, params__chi=0.25, time__dt_min=1e-2, time__dt_init=1e-2,
                                 time__dt_max=1e-2, time__T_end=0.1))
    assert sim.next_dt(0.1) == pytest.approx(1e-2)
    assert "fixed_dt_bound_exceeded" in sim.tags


def test_adaptive_dt_respects_bounds():
    sim = Simulation(make_config(params__A=2.0, params__chi=0.25, time__dt_min=1e-6, time__dt_init=1e-3,
                                 time__dt_max=1e-2, time__T_end=1.0))
    cfl, cross = sim.dt_bounds()
    assert cfl == float("inf")
    # 第一步取 dt_init，之后按 growth 增长
    assert sim.next_dt(1.0) == pytest.approx(min(1e-3, cross))
    sim.step(1.0)
    assert sim.series_rows[1]['dt'] == pytest.approx(1e-3)
    cfl, cross = sim.dt_bounds()
    assert sim.next_dt(1.0) == pytest.approx(min(1.2e-3, cross, cfl))
    # 最后一步截到 T_end
    assert sim.next_dt(sim.state.t + 1e-5) == pytest.approx(1e-5)


def test_first_step_clamps_dt_init_to_dt_max():
    sim = Simulation(make_config(time__dt_min=1e-6, time__dt_init=5e-3, time__dt_max=2e-3, time__T_end=1.0))
    assert sim.next_dt(1.0) == pytest.approx(2e-3)


def test_failed_step_aborts_with_checkpoint(tmp_path, monkeypatch):
    def failing(*args, **kwargs):
        raise StepFailure("ch", "Krylov 未收敛", residual=1.0, iterations=500)

    monkeypatch.setattr(simulation, "advance", failing)
    sim = Simulation(make_config(), out_dir=str(tmp_path))
    with pytest.raises(SimulationAborted) as err:
        sim.run()
    assert err.value.checkpoint == str(tmp_path / "checkpoint_abort.npz")
    assert os.path.exists(err.value.checkpoint)


def test_failed_step_is_retried_with_half_dt(monkeypatch):
    real_advance = simulation.advance
    calls = []

    def flaky(grid, state, dt, *args, **kwargs):
        calls.append(dt)
        if len(calls) == 1:
            raise StepFailure("sigma", "出现 NaN")
        return real_advance(grid, state, dt, *args, **kwargs)

    monkeypatch.setattr(simulation, "advance", flaky)
    sim = Simulation(make_config(time__dt_min=1e-6, time__dt_init=1e-3, time__dt_max=1e-3, time__growth=1.0,
                                 time__T_end=2e-3))
    sim.run()
    assert calls[:2] == [pytest.approx(1e-3), pytest.approx(5e-4)]
    assert sim.series_rows[1]['dt'] == pytest.approx(5e-4)
    assert sim.state.t == pytest.approx(2e-3)


def test_energy_decreases_without_flow_or_sources():
    sim = Simulation(make_config(initial__amplitude=0.5, solver__flow=False, time__T_end=0.02))
    sim.run()
    energies = np.array([row['E_total'] for row in sim.series_rows])
    assert np.all(np.diff(energies) <= 1e-10 * abs(energies[0]))


def test_run_simulation_enforces_validation(tmp_path):
    cfg = make_config(params__A=1.0, params__chi=0.5, time__T_end=0.0)
    with pytest.raises(ValidationError):
        run_simulation(cfg, out_dir=str(tmp_path))
    report = run_simulation(cfg.override({"solver.override_validation": True}), out_dir=str(tmp_path))
    assert "validation_overridden" in report.tags
    assert report.manifest['tags'] == report.tags


def test_health_of_initial_state():
    sim = Simulation(make_config())
    report = sim.health()
    assert report.ok


def test_fixed_dt_run_retries_with_half_dt(monkeypatch):
    real_advance = simulation.advance
    calls = []

    def flaky(grid, state, dt, *args, **kwargs):
        calls.append(dt)
        if len(calls) == 2:
            raise StepFailure("ch", "Krylov 未收敛", residual=1.0, iterations=500)
        return real_advance(grid, state, dt, *args, **kwargs)

    monkeypatch.setattr(simulation, "advance", flaky)
    sim = Simulation(make_config(time__T_end=3e-3))
    assert sim.cfg.time.fixed
    report = sim.run()
    dts = [row['dt'] for row in sim.series_rows[1:]]
    assert dts[:3] == [pytest.approx(1e-3), pytest.approx(5e-4), pytest.approx(1e-3)]
    assert sim.state.t == pytest.approx(3e-3)
    assert "step_retried" in report.tags


def test_non_finite_step_is_rejected_by_health_check(monkeypatch):
    real_advance = simulation.advance
    calls = []

    def poisoned(grid, state, dt, *args, **kwargs):
        calls.append(dt)
        outcome = real_advance(grid, state, dt, *args, **kwargs)
        if len(calls) == 1:
            outcome.state.phi[3, 3] = np.nan
        return outcome

    monkeypatch.setattr(simulation, "advance", poisoned)
    sim = Simulation(make_config(time__T_end=1e-3))
    sim.run()
    assert calls == [pytest.approx(1e-3), pytest.approx(5e-4), pytest.approx(5e-4)]
    assert np.all(np.isfinite(sim.state.phi))
    assert sim.health().ok


def test_persistent_divergence_blow_up_aborts(tmp_path, monkeypatch):
    real_advance = simulation.advance

    def leaky(grid, state, dt, *args, **kwargs):
        outcome = real_advance(grid, state, dt, *args, **kwargs)
        outcome.state.v.u[4, 4] += 1.0
        return outcome

    monkeypatch.setattr(simulation, "advance", leaky)
    sim = Simulation(make_config(), out_dir=str(tmp_path))
    with pytest.raises(SimulationAborted) as err:
        sim.run()
    assert os.path.exists(err.value.checkpoint)
    assert sim.state.step == 0
