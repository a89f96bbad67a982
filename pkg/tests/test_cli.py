import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from dpilqr import config as cfgio
from dpilqr.cli import main
from dpilqr.errors import ConfigurationError
from dpilqr.sim import ScenarioConfig

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"

MINIMAL = """
scenario:
  n_agents: 2
  seed: 3
  n_steps: 30
"""

DECOUPLED = """
scenario:
  n_agents: 2
  x0:    [[0.0, 0.0, 0.0, 0.0], [6.0, 6.0, 0.0, 0.0]]
  goals: [[1.0, 1.0, 0.0, 0.0], [7.0, 7.0, 0.0, 0.0]]
  n_steps: 40
"""


def _write(tmp_path, text, name="scenario.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_solve_smoke(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["solve", _write(tmp_path, MINIMAL), "--out", str(out)]) == 0
    lines = (out / "seed3_n2_double_integrator_distributed.csv").read_text().splitlines()
    metrics = json.loads((out / "seed3_n2_double_integrator_distributed.metrics.json").read_text())
    assert len(lines) - 1 == (metrics["steps"] + 1) * 2
    assert "status=" in capsys.readouterr().out


def test_alpha_below_one_is_validation_error(tmp_path, capsys):
    path = _write(tmp_path, MINIMAL + "planner:\n  alpha: 0.5\n")
    assert main(["solve", path, "--out", str(tmp_path / "o")]) == 2
    assert "alpha" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()
    assert main(["check", _write(tmp_path, MINIMAL, "ok.yaml"), "--alpha", "0.5"]) == 2


def test_unknown_key_is_named(tmp_path, capsys):
    assert main(["check", _write(tmp_path, "scenario:\n  n_agnets: 3\n")]) == 2
    assert "scenario.n_agnets" in capsys.readouterr().err
    assert main(["check", _write(tmp_path, "solvr:\n  max_iterations: 3\n", "b.yaml")]) == 2
    assert "'solvr'" in capsys.readouterr().err


def test_parse_error_has_line(tmp_path, capsys):
    assert main(["check", _write(tmp_path, "scenario:\n  n_agents: 2\n  dt: [0.1\n  horizon: 4\n")]) == 2
    err = capsys.readouterr().err
    assert "scenario.yaml:4:" in err


def test_infeasible_scenario(tmp_path, capsys):
    assert main(["check", _write(tmp_path, "scenario:\n  n_agents: 40\n  workspace: [2, 2]\n")]) == 2
    assert "could not place" in capsys.readouterr().err


def test_decoupled_planners_write_identical_trajectories(tmp_path):
    path = _write(tmp_path, DECOUPLED)
    out = tmp_path / "out"
    assert main(["solve", path, "--planner", "distributed", "--out", str(out)]) == 0
    assert main(["solve", path, "--planner", "central", "--out", str(out)]) == 0
    dp = (out / "seed0_n2_double_integrator_distributed.csv").read_bytes()
    central = (out / "seed0_n2_double_integrator_centralized.csv").read_bytes()
    assert dp == central


def test_manifest_round_trip(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["solve", _write(tmp_path, MINIMAL), "--seed", "8", "--out", str(out1)]) == 0
    manifest = out1 / "seed8_n2_double_integrator_distributed.manifest.yaml"
    run = cfgio.load(manifest)
    assert run.scenario.seed == 8
    assert main(["solve", str(manifest), "--out", str(out2)]) == 0
    name = "seed8_n2_double_integrator_distributed.csv"
    assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_outputs_stay_under_out(tmp_path, monkeypatch):
    work = tmp_path / "cwd"
    work.mkdir()
    monkeypatch.chdir(work)
    scenario = _write(tmp_path, MINIMAL)
    out = tmp_path / "out"
    assert main(["solve", scenario, "--out", str(out)]) == 0
    assert list(work.iterdir()) == []
    assert sorted(os.listdir(tmp_path)) == ["cwd", "out", "scenario.yaml"]


def test_env_var_sets_default_out(tmp_path, monkeypatch):
    monkeypatch.setenv("DPILQR_OUT", str(tmp_path / "env_out"))
    assert main(["solve", _write(tmp_path, MINIMAL)]) == 0
    assert (tmp_path / "env_out" / "seed3_n2_double_integrator_distributed.csv").exists()


def test_campaign_serial(tmp_path, capsys):
    text = MINIMAL + "campaign:\n  seeds: [0, 1]\n  n_agents: [2, 3]\n"
    out = tmp_path / "out"
    assert main(["campaign", _write(tmp_path, text), "--serial", "--out", str(out)]) == 0
    table = capsys.readouterr().out
    assert "distributed:solve_ms" in table and "centralized:dist_left" in table
    records = (out / "records.jsonl").read_text().splitlines()
    assert len(records) == 8
    assert (out / "summary.csv").exists() and (out / "manifest.yaml").exists()
    assert main(["campaign", str(out / "manifest.yaml"), "--serial", "--out", str(tmp_path / "again")]) == 0
    again = (tmp_path / "again" / "records.jsonl").read_text().splitlines()
    timing = ("solve_times", "mean_solve_time", "graph_time")

    def untimed(line):
        return {k: v for k, v in json.loads(line).items() if k not in timing}

    assert [untimed(r) for r in records] == [untimed(r) for r in again]


def test_empty_campaign(tmp_path):
    text = "campaign:\n  seeds: []\n  n_agents: [3]\n"
    assert main(["campaign", _write(tmp_path, text), "--out", str(tmp_path / "o")]) == 0


def test_example_files_are_valid():
    for path in sorted(SCENARIOS.glob("*.yaml")):
        cfgio.load(path)


def test_defaults_file_states_every_default():
    run = cfgio.load(SCENARIOS / "defaults.yaml")
    assert cfgio.to_dict(run) == cfgio.to_dict(cfgio.RunConfig())
    text = (SCENARIOS / "defaults.yaml").read_text()
    for section, keys in (("scenario", cfgio.SCENARIO_KEYS), ("costs", cfgio.COST_KEYS),
                          ("solver", cfgio.SOLVER_KEYS), ("planner", cfgio.PLANNER_KEYS)):
        for key in keys:
            assert f"\n  {key}:" in text, f"{section}.{key} missing from defaults.yaml"


def test_config_round_trip():
    run = cfgio.RunConfig(ScenarioConfig(n_agents=5, model="quad6d", budget=0.05, seed=3), "central", 2,
                          cfgio.Campaign(seeds=(1, 2), n_agents=(3,)))
    again = cfgio.loads(cfgio.dumps(run))
    assert cfgio.to_dict(again) == cfgio.to_dict(run)
    assert again.scenario.extent == (10.0, 10.0, 4.0) and again.planner == "centralized"
    assert again.campaign == run.campaign and again.jobs == 2


def test_unknown_planner():
    with pytest.raises(ConfigurationError, match="unknown planner"):
        cfgio.loads("planner:\n  kind: consensus\n")


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "dpilqr.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "solve" in res.stdout and "campaign" in res.stdout
