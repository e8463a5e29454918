import json

import pytest

from fsibeam import cli
from fsibeam.store import RunManifest, read_events


def cfg_path(config_dir, name):
    return str(config_dir / f"{name}.toml")


def test_validate_ok(config_dir, capsys):
    assert cli.main(["validate", "--config", cfg_path(config_dir, "rest")]) == cli.EXIT_OK
    assert "ok" in capsys.readouterr().out


def test_config_errors(tmp_path, config_dir):
    assert cli.main(["validate", "--config", str(tmp_path / "nope.toml")]) == cli.EXIT_CONFIG
    bad = tmp_path / "bad.toml"
    bad.write_text("[grid]\nnx = 7\n")
    assert cli.main(["validate", "--config", str(bad)]) == cli.EXIT_CONFIG
    assert cli.main(["validate", "--config", cfg_path(config_dir, "rest"), "--nx", "31"]) == cli.EXIT_CONFIG


def test_initial_data_error_is_config_error(tmp_path):
    bad = tmp_path / "deep.toml"
    bad.write_text('[initial]\nprofile = "bump"\namplitude = 3.0\n')
    assert cli.main(["validate", "--config", str(bad)]) == cli.EXIT_CONFIG


def test_run_writes_atomic_directory(tmp_path, config_dir):
    out = tmp_path / "run"
    argv = ["run", "--config", cfg_path(config_dir, "bump"), "--out", str(out), "-q"]
    code = cli.main(argv[:3] + ["--dt", "1e-3"] + argv[3:] + [])
    assert code == cli.EXIT_OK
    m = RunManifest.load(out)
    assert m.status == "complete" and m.verify() == []
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".")]
    # refuses to overwrite without --force
    assert cli.main(argv) == cli.EXIT_CONFIG


def test_contact_run_exits_four_with_event(tmp_path, config_dir):
    out = tmp_path / "contact"
    code = cli.main(["run", "--config", cfg_path(config_dir, "contact"), "--out", str(out), "-q"])
    assert code == cli.EXIT_CONTACT
    events = read_events(out / "events.json")
    assert len(events) == 1 and events[0].x == pytest.approx(1.0)
    assert RunManifest.load(out).status == "contact"


def test_numerical_failure_exit(tmp_path, config_dir):
    text = (config_dir / "bump.toml").read_text()
    text = text.replace("max_iter = 200", "max_iter = 1").replace("tol = 1e-8", "tol = 1e-15")
    cfg = tmp_path / "stiff.toml"
    cfg.write_text(text)
    out = tmp_path / "fail"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out), "-q"]) == cli.EXIT_NUMERICAL
    assert not out.exists()


def short_config(tmp_path, config_dir, name, T):
    text = (config_dir / f"{name}.toml").read_text()
    path = tmp_path / f"{name}_short.toml"
    path.write_text(text.replace("T = 1.0", f"T = {T}"))
    return str(path)


def test_sweep_schema(tmp_path, config_dir):
    out = tmp_path / "sweep"
    code = cli.main(["sweep", "--config", short_config(tmp_path, config_dir, "rest", 0.05), "--out", str(out), "-q",
                     "--gammas", "0.1,0.05", "--delta", "0.2"])
    assert code == cli.EXIT_OK
    report = json.loads((out / "sweep_report.json").read_text())
    assert report["gammas"] == [0.1, 0.05]
    assert set(report["checks"]) == {"velocity_trend", "beam_trend", "positivity", "limit_energy"}
    assert RunManifest.load(out).verify() == []
    for g in ("0.1", "0.05"):
        assert RunManifest.load(out / "members" / f"gamma_{g}").status == "complete"


def test_sweep_rejects_increasing_gammas(tmp_path, config_dir):
    code = cli.main(["sweep", "--config", cfg_path(config_dir, "rest"), "--out", str(tmp_path / "s"),
                     "--gammas", "0.05,0.1"])
    assert code == cli.EXIT_CONFIG


def test_study_projector(tmp_path, config_dir, capsys):
    out = tmp_path / "proj"
    code = cli.main(["study-projector", "--config", cfg_path(config_dir, "bump"), "--out", str(out),
                     "--levels", "2,4", "-q"])
    assert code == cli.EXIT_OK
    data = json.loads((out / "projector_report.json").read_text())
    assert [r["label"] for r in data["rows"]] == ["2", "3", "4"]
    assert (out / "tables" / "projector.csv").exists()
    assert cli.main(["study-projector", "--config", cfg_path(config_dir, "bump"), "--out",
                     str(tmp_path / "p2"), "--levels", "two"]) == cli.EXIT_CONFIG


def test_study_envelope_from_run(tmp_path, config_dir):
    run_dir = tmp_path / "run"
    assert cli.main(["run", "--config", cfg_path(config_dir, "bump"), "--out", str(run_dir), "-q"]) == 0
    out = tmp_path / "env"
    code = cli.main(["study-envelope", "--config", cfg_path(config_dir, "bump"), "--out", str(out),
                     "--from-run", str(run_dir), "--delta", "0.2,0.1", "-q"])
    assert code == cli.EXIT_OK
    report = json.loads((out / "envelope_report.json").read_text())
    assert [r["delta"] for r in report["rows"]] == [0.2, 0.1]
    assert all(r["below_violations"] == 0 and r["gap_violations"] == 0 for r in report["rows"])


def test_module_entry_point():
    import subprocess
    import sys

    res = subprocess.run([sys.executable, "-m", "fsibeam", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "fsibeam" in res.stdout
