import json
from pathlib import Path

import pytest

import nsch
import workers.simulation as simulation
from core.errors import StepFailure


CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def tiny_config(tmp_path, extra: str = "") -> str:
    path = tmp_path / "tiny.cfg"
    path.write_text("grid.nx = 8\ngrid.ny = 8\ntime.T_end = 0.003\n" + extra, encoding="utf-8")
    return str(path)


@pytest.mark.parametrize("name", ["default.cfg", "disk_proliferation.cfg", "energy_acceptance.cfg",
                                  "interface_strip.cfg"])
def test_validate_sample_configs(name, capsys):
    assert nsch.main(["validate-config", "--config", str(CONFIG_DIR / name)]) == nsch.EXIT_OK
    assert "✓" in capsys.readouterr().out


def test_validate_reports_coercivity_violation(capsys):
    path = str(CONFIG_DIR / "coercivity_violation.cfg")
    assert nsch.main(["validate-config", "--config", path]) == nsch.EXIT_FAILED
    assert "❌" in capsys.readouterr().out
    assert nsch.main(["validate-config", "--config", path, "--override-validation"]) == nsch.EXIT_OK


def test_config_errors_exit_with_two(tmp_path):
    assert nsch.main(["validate-config", "--config", str(tmp_path / "missing.cfg")]) == nsch.EXIT_CONFIG
    bad = tmp_path / "bad.cfg"
    bad.write_text("params.chii = 0.1\n", encoding="utf-8")
    assert nsch.main(["run", "--config", str(bad), "--out", str(tmp_path / "out")]) == nsch.EXIT_CONFIG


def test_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    code = nsch.main(["run", "--config", tiny_config(tmp_path), "--out", str(out), "--seed", "7", "-q"])
    assert code == nsch.EXIT_OK
    report = json.loads(capsys.readouterr().out.split("=" * 70 + "\n", 2)[-1])
    assert report['steps'] == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest['seed'] == 7
    assert manifest['steps'] == 3
    assert (out / "series.csv").exists()
    assert (out / "checkpoint_final.npz").exists()


def test_run_rejects_invalid_parameters(tmp_path):
    path = tiny_config(tmp_path, "params.A = 1.0\nparams.chi = 0.5\n")
    assert nsch.main(["run", "--config", path, "--out", str(tmp_path / "a"), "-q"]) == nsch.EXIT_FAILED
    assert nsch.main(["run", "--config", path, "--out", str(tmp_path / "b"), "-q",
                      "--override-validation"]) == nsch.EXIT_OK


def test_run_abort_exits_with_three(tmp_path, monkeypatch):
    def failing(*args, **kwargs):
        raise StepFailure("ns", "散度超限", residual=1e-3)

    monkeypatch.setattr(simulation, "advance", failing)
    out = tmp_path / "out"
    assert nsch.main(["run", "--config", tiny_config(tmp_path), "--out", str(out), "-q"]) == nsch.EXIT_ABORTED
    assert (out / "checkpoint_abort.npz").exists()


def test_restart_continues_run(tmp_path):
    first = tmp_path / "first"
    config = tiny_config(tmp_path)
    assert nsch.main(["run", "--config", config, "--out", str(first), "--until", "0.002", "-q"]) == nsch.EXIT_OK
    second = tmp_path / "second"
    assert nsch.main(["run", "--config", config, "--out", str(second), "-q",
                      "--restart", str(first / "checkpoint_final.npz")]) == nsch.EXIT_OK
    manifest = json.loads((second / "manifest.json").read_text())
    assert manifest['steps'] == 3
    assert "restarted" in manifest['tags']


def test_verify_oracle_without_strip(capsys):
    assert nsch.main(["verify-oracle", "--skip-strip"]) == nsch.EXIT_OK
    assert "max_error" in capsys.readouterr().out


def test_verify_energy_small(tmp_path):
    config = tiny_config(tmp_path, "initial.amplitude = 0.3\n")
    code = nsch.main(["verify-energy", "--config", config, "--steps", "5", "--dts", "0.002,0.001", "--T", "0.004",
                      "--skip-monotonicity", "-q"])
    assert code in (nsch.EXIT_OK, nsch.EXIT_FAILED)


def test_subcommand_is_required():
    with pytest.raises(SystemExit):
        nsch.main([])
