import json

import pytest

from qexp_bsde.cli import main
from qexp_bsde.errors import ConfigError, PipelineError
from qexp_bsde.experiments import SCENARIOS, ExperimentConfig, RunManifest, Verdict, emit_report, run_experiment


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def test_list_commands(capsys):
    assert main(["list-scenarios"]) == 0
    out = capsys.readouterr().out
    assert all(name in out for name in SCENARIOS)
    assert main(["list-presets"]) == 0
    out = capsys.readouterr().out
    assert "problems:" in out and "cole_hopf" in out and "drivers:" in out


def test_empty_pipeline(tmp_path, capsys):
    code = main(["run", _write(tmp_path, {"scenario": "empty"}), "--out-dir", str(tmp_path / "o")])
    assert code == 0
    assert "checks: 0" in capsys.readouterr().out
    assert (tmp_path / "o" / "manifest.json").exists()


def test_zero_driver_smoke_and_manifest(tmp_path):
    m = run_experiment(ExperimentConfig.from_dict({"scenario": "zero_driver_smoke"}), tmp_path)
    assert [v.status for v in m.verdicts] == ["pass"]
    assert m.verdicts[0].value == 1.0
    data = json.loads((tmp_path / "manifest.json").read_text())
    for f in data["files"]:
        assert (tmp_path / f).exists()
    assert {v["status"] for v in data["verdicts"]} <= {"pass", "fail", "skipped"}
    assert data["config"]["scenario"] == "zero_driver_smoke"


def test_config_echo_reruns_identically(tmp_path):
    cfg = {"scenario": "regression_vs_lattice", "seed": 5, "solver": {"n_paths": 1500}}
    m1 = run_experiment(ExperimentConfig.from_dict(cfg), tmp_path / "a")
    echo = json.loads((tmp_path / "a" / "manifest.json").read_text())["config"]
    run_experiment(ExperimentConfig.from_dict(echo), tmp_path / "b")
    assert (tmp_path / "a" / "comparison.csv").read_bytes() == (tmp_path / "b" / "comparison.csv").read_bytes()
    m3 = run_experiment(ExperimentConfig.from_dict({**cfg, "seed": 6}), tmp_path / "c")
    assert (tmp_path / "a" / "comparison.csv").read_bytes() != (tmp_path / "c" / "comparison.csv").read_bytes()
    assert m1.exit_code == 0 and m3.exit_code == 0


@pytest.mark.parametrize("cfg, path", [
    ({"scenario": "nope"}, "$.scenario"),
    ({"scenario": "cole_hopf", "problem": {"preset": "nope"}}, "$.problem.preset"),
    ({"scenario": "cole_hopf", "driver": {"preset": "nope"}}, "$.driver.preset"),
    ({"scenario": "cole_hopf", "problem": {"preset": "cole_hopf"},
      "model": {"preset": "additive", "params": {"dim_x": 2, "dim_w": 2}}}, "$.model"),
    ({"scenario": "cole_hopf", "solver": {"backend": "magic"}}, "$.solver.backend"),
    ({"scenario": "cole_hopf", "seed": -1}, "$.seed"),
    ({"scenario": "cole_hopf", "extra": 1}, "$.extra"),
])
def test_config_errors_carry_json_path(cfg, path, tmp_path, capsys):
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_dict(cfg)
    assert info.value.path == path
    assert main(["run", _write(tmp_path, cfg)]) == 2
    assert path in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["run", str(tmp_path / "missing.json")]) == 2


def test_pipeline_error_provenance(tmp_path, capsys):
    cfg = {"scenario": "zero_driver_smoke", "solver": {"backend": "regression", "n_paths": 5}}
    with pytest.raises(PipelineError) as info:
        run_experiment(ExperimentConfig.from_dict(cfg), tmp_path)
    assert (info.value.module, info.value.step) == ("bsde_solver", "solve")
    assert main(["run", _write(tmp_path, cfg), "--out-dir", str(tmp_path / "o")]) == 3
    assert "[bsde_solver/solve]" in capsys.readouterr().err


def test_failing_check_sets_exit_code(tmp_path, capsys):
    cfg = {"scenario": "cole_hopf", "params": {"tolerance": 1e-12}, "driver": {"preset": "zero"},
           "problem": {"preset": "cole_hopf", "params": {"n_steps": 10}}}
    assert main(["run", _write(tmp_path, cfg), "--out-dir", str(tmp_path / "o")]) == 1
    out = capsys.readouterr().out
    assert "[FAIL] cole_hopf_Y0" in out and "exit code: 1" in out


def test_emit_report_flags_and_skips():
    m = RunManifest({"scenario": "x", "seed": 0})
    m.verdicts += [Verdict("a", "pass", 1.0, 2.0), Verdict("b", "skipped")]
    assert m.exit_code == 0
    m.verdicts.append(Verdict("bound", "fail", 3.0, 2.0))
    text = emit_report(m)
    assert "[FAIL] bound" in text and "[SKIP] b" in text and m.exit_code == 1


def test_seed_and_quiet_flags(tmp_path, capsys):
    p = _write(tmp_path, {"scenario": "zero_driver_smoke", "seed": 1})
    assert main(["run", p, "--seed", "9", "--out-dir", str(tmp_path / "o"), "--quiet"]) == 0
    assert capsys.readouterr().out == ""
    assert json.loads((tmp_path / "o" / "manifest.json").read_text())["config"]["seed"] == 9


def test_cascade_summary_has_monotonicity_table(tmp_path):
    cfg = {"scenario": "cascade", "problem": {"preset": "exp_utility", "params": {"n_steps": 8}},
           "cascade": {"schedule": [[1, 1, 10], [2, 1, 10], [1, 2, 10], [2, 2, 10]]},
           "params": {"lipschitz_check": False}}
    m = run_experiment(ExperimentConfig.from_dict(cfg), tmp_path)
    text = (tmp_path / "summary.txt").read_text()
    assert "monotonicity table" in text and "n\\m" in text
    assert m.exit_code == 0


@pytest.mark.parametrize("scenario", ["cole_hopf", "linear_ode", "regression_vs_lattice", "bounds", "comparison",
                                      "energy", "stability"])
def test_fast_scenarios_pass(scenario, tmp_path):
    m = run_experiment(ExperimentConfig.from_dict({"scenario": scenario}), tmp_path)
    assert m.verdicts and m.exit_code == 0, emit_report(m)
    assert all((tmp_path / f).exists() for f in m.files)
