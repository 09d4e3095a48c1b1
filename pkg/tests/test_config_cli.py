import json
from pathlib import Path

import pytest

from mfspde import __version__
from mfspde.cli import COMMANDS, main
from mfspde.config import DEFAULTS, ConfigError, RunConfig

DATA = Path(__file__).parent / "data"
TINY = DATA / "tiny.toml"


def run(tmp_path, *args, name="out"):
    out = tmp_path / name
    code = main([*args, "--config", str(TINY), "--out", str(out)])
    return code, out


def test_defaults_valid():
    cfg = RunConfig.from_dict({})
    assert cfg.data == DEFAULTS
    assert cfg.regression.transform == "log"
    lin = RunConfig.from_dict({"model": {"preset": "linear_test"}})
    assert lin.regression.transform == "identity"


def test_round_trip_through_echo():
    cfg = RunConfig.load(TINY)
    assert RunConfig.from_dict(cfg.echo()) == cfg
    assert cfg.with_seed(3).seed == 3 and cfg.seed == 7


@pytest.mark.parametrize("raw,field", [
    ({"noise": {"n_scenarios": 0}}, "noise.n_scenarios"),
    ({"grid": {"n_interior": 0}}, "grid.n_interior"),
    ({"grid": {"bogus": 1}}, "grid.bogus"),
    ({"model": {"preset": "nope"}}, "model.preset"),
    ({"model": {"params": {"zz": 1}}}, "model.params.zz"),
    ({"model": {"params": {"theta": -5.0}}}, "model.params"),
    ({"control": {"value": 100.0}}, "control.value"),
    ({"solver": {"omega": 0.0}}, "solver.omega"),
    ({"noise": {"marks": [0.0], "intensities": [1.0]}}, "noise.marks"),
    ({"model": {"F": {"type": "median"}}}, "model.F"),
    ({"time": {"T": "one"}}, "time.T"),
])
def test_invalid_fields_named(raw, field):
    with pytest.raises(ConfigError) as exc:
        RunConfig.from_dict(raw)
    assert exc.value.field == field


def test_backward_term_can_be_disabled():
    gen = RunConfig.from_dict({"backward": {"K": {"type": "none"}}}).backward_generator()
    assert gen.K is None and gen.H is not None


def test_missing_config_exit_2(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "nope.toml")]) == 2
    assert "nope.toml" in capsys.readouterr().err


def test_zero_scenarios_exit_2(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text("[noise]\nn_scenarios = 0\n")
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "noise.n_scenarios" in capsys.readouterr().err


def test_unknown_suite_exit_2(tmp_path):
    assert run(tmp_path, "verify", "--suite", "bogus")[0] == 2


def test_bad_threads_exit_2(tmp_path):
    assert run(tmp_path, "simulate", "--threads", "0")[0] == 2


def test_version(capsys):
    with pytest.raises(SystemExit):
        main(["--version"])
    assert __version__ in capsys.readouterr().out


def test_simulate_outputs(tmp_path):
    code, out = run(tmp_path, "simulate")
    assert code == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "simulate" and set(man["files"]) == {"forward_summary.csv", "forward_report.json"}
    assert "timestamp" in man
    header = (out / "forward_summary.csv").read_text().splitlines()[0]
    assert header.startswith("t,x,")


def test_golden_simulate_hash(tmp_path):
    code, out = run(tmp_path, "simulate")
    assert code == 0
    golden = (DATA / "golden_simulate.sha256").read_text().strip()
    assert json.loads((out / "manifest.json").read_text())["hash"] == golden


def test_seed_override_changes_hash(tmp_path):
    _, a = run(tmp_path, "simulate", name="a")
    _, b = run(tmp_path, "simulate", "--seed", "8", name="b")
    ha = json.loads((a / "manifest.json").read_text())["hash"]
    hb = json.loads((b / "manifest.json").read_text())["hash"]
    assert ha != hb


def test_tol_zero_warns(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text(TINY.read_text().replace("max_outer = 10", "max_outer = 2\ntol_fp = 0.0"))
    out = tmp_path / "o"
    assert main(["harvest", "--config", str(p), "--out", str(out)]) == 0
    summ = json.loads((out / "harvest_summary.json").read_text())
    assert summ["converged"] is False
    assert summ["status"].startswith("warning")


def test_verify_operators_passes(tmp_path):
    code, out = run(tmp_path, "verify", "--suite", "operators")
    assert code == 0
    rep = json.loads((out / "verify_operators.json").read_text())
    assert rep["all_pass"]


@pytest.mark.parametrize("cmd", [c for c in COMMANDS if c != "verify"])
def test_every_command_runs(tmp_path, cmd):
    code, out = run(tmp_path, cmd)
    assert code == 0
    assert (out / "manifest.json").is_file()


def test_harvest_summary_contents(tmp_path):
    code, out = run(tmp_path, "harvest")
    assert code == 0
    summ = json.loads((out / "harvest_summary.json").read_text())
    assert {"J", "iterations", "fixed_point_residual", "necessary_residual", "status"} <= set(summ)
    mp = json.loads((out / "mp_report.json").read_text())
    assert mp["comparisons"][0]["label"] == "u*" and mp["concavity"]["verdict"] in ("pass", "counterexample")


def test_verify_picard_reports(tmp_path):
    code, out = run(tmp_path, "verify", "--suite", "picard")
    rep = json.loads((out / "verify_picard.json").read_text())["checks"]
    assert "d5_over_d2" in rep["forward_contraction"] and "ratios" in rep["backward_contraction"]
    assert code == (0 if all(v["pass"] for v in rep.values()) else 1)
