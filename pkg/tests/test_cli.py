import json
from pathlib import Path

from click.testing import CliRunner

from wflow.cli import main

SMALL_CONFIG = """
[basis]
K = 4

[dynamics]
dt = 1e-3
steps = 200
ensemble = 2
record_stride = 10
T = 0.01

[run]
seed = 3
"""


def _run(runner, args):
    return runner.invoke(main, args, catch_exceptions=False)


def test_validate_basis(tmp_path):
    runner = CliRunner()
    res = _run(runner, ["validate-basis", "--K", "6", "--out", str(tmp_path)])
    assert res.exit_code == 0
    assert "PASS" in res.output
    assert (tmp_path / "basis-certificates.csv").exists()
    manifest = json.loads(
        (tmp_path / "validate-basis-manifest.json").read_text())
    assert manifest["passed"]
    assert "config_sha256" in manifest and "seed" in manifest


def test_unknown_config_key_exit_2(tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[dynamics]\nstepz = 100\n")
    runner = CliRunner()
    res = runner.invoke(main, ["sgf", "--config", str(cfg)])
    assert res.exit_code == 2
    assert "dynamics.stepz" in res.output


def test_unknown_section_exit_2(tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[energee]\npreset = 'entropy'\n")
    runner = CliRunner()
    res = runner.invoke(main, ["flow", "--config", str(cfg)])
    assert res.exit_code == 2
    assert "energee" in res.output


def test_missing_config_exit_2(tmp_path):
    runner = CliRunner()
    res = runner.invoke(main, ["sgf", "--config", str(tmp_path / "none.toml")])
    assert res.exit_code == 2


def test_grad_check_summary_line(tmp_path):
    runner = CliRunner()
    res = _run(runner, ["grad-check", "--samples", "5", "--seed", "7",
                        "--out", str(tmp_path)])
    assert res.exit_code == 0
    assert "5/5 within tolerance" in res.output


def test_sample_outputs_jsonl(tmp_path):
    runner = CliRunner()
    res = _run(runner, ["sample", "--K", "4", "--n", "4", "--count", "5",
                        "--seed", "42", "--out", str(tmp_path)])
    assert res.exit_code == 0
    lines = (tmp_path / "samples.jsonl").read_text().splitlines()
    assert len(lines) == 5
    assert all("coeffs" in json.loads(line) for line in lines)


def test_sgf_rerun_byte_identical(tmp_path, monkeypatch):
    cfg = tmp_path / "run.toml"
    cfg.write_text(SMALL_CONFIG)
    runner = CliRunner()
    out1, out2 = tmp_path / "a", tmp_path / "b"
    monkeypatch.setenv("WFLOW_THREADS", "1")
    assert _run(runner, ["sgf", "--config", str(cfg),
                         "--out", str(out1)]).exit_code == 0
    monkeypatch.setenv("WFLOW_THREADS", "4")
    assert _run(runner, ["sgf", "--config", str(cfg),
                         "--out", str(out2)]).exit_code == 0
    a = (out1 / "sgf-trajectories.csv").read_bytes()
    b = (out2 / "sgf-trajectories.csv").read_bytes()
    assert a == b


def test_seed_override_changes_output(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(SMALL_CONFIG)
    runner = CliRunner()
    out1, out2 = tmp_path / "a", tmp_path / "b"
    _run(runner, ["sgf", "--config", str(cfg), "--out", str(out1)])
    _run(runner, ["sgf", "--config", str(cfg), "--seed", "99",
                  "--out", str(out2)])
    a = (out1 / "sgf-trajectories.csv").read_bytes()
    b = (out2 / "sgf-trajectories.csv").read_bytes()
    assert a != b
    manifest = json.loads((out2 / "sgf-manifest.json").read_text())
    assert manifest["seed"] == 99
    assert manifest["config"]["run"]["seed"] == 99


def test_pme_snapshots(tmp_path):
    runner = CliRunner()
    res = _run(runner, ["pme", "--preset", "heat", "--T", "0.05",
                        "--nx", "256", "--out", str(tmp_path)])
    assert res.exit_code == 0
    header = (tmp_path / "pme-snapshots.csv").read_text().splitlines()[0]
    assert header == "time,x,rho"


def test_flow_csv(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(SMALL_CONFIG)
    runner = CliRunner()
    res = _run(runner, ["flow", "--config", str(cfg), "--out", str(tmp_path)])
    assert res.exit_code == 0
    header = (tmp_path / "flow.csv").read_text().splitlines()[0]
    assert header.startswith("time,c1")
    assert "W_F" in header
