import csv
import io

import pytest

from cogwlan import ScenarioConfig, analyze
from cogwlan.cli import COLUMNS, ExperimentPlan, build_parser, main, plan_from_args, run
from cogwlan.config import ConfigError


def rows_of(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))


def test_analytic_point(capsys):
    assert main(["analytic", "--lambda-p", "20", "--n-s", "4"]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == ",".join(COLUMNS)
    (row,) = rows_of(out)
    expected = analyze(ScenarioConfig(lambda_p=20.0, n_s=4))
    assert float(row["lambda_sat_pkts_per_s"]) == pytest.approx(expected.lambda_sat, rel=1e-8)
    assert float(row["big_lambda_sat"]) == pytest.approx(expected.big_lambda_sat, rel=1e-8)
    assert row["sim_throughput"] == "" and row["error"] == ""


def test_sweep_keeps_grid_order(tmp_path):
    out = tmp_path / "grid.csv"
    assert main(["sweep", "--mode", "analytic", "--lambda-p", "10,30", "--n-s", "2,3",
                 "--ratio-r", "13/12,3/2", "--out", str(out)]) == 0
    rows = rows_of(out.read_text())
    keys = [(float(r["lambda_p"]), int(r["n_s"]), r["ratio_r"]) for r in rows]
    assert keys == [(lam, n, rr) for lam in (10.0, 30.0) for n in (2, 3) for rr in ("13/12", "3/2")]


def test_validate_gate(capsys):
    args = ["validate", "--lambda-p", "15", "--n-s", "3", "--frames", "2000", "--seed", "5"]
    assert main(args + ["--gate", "1.0"]) == 0
    (row,) = rows_of(capsys.readouterr().out)
    assert row["seed"] == "5" and float(row["mismatch_rel"]) >= 0
    assert main(args + ["--gate", "0"]) == 1


def test_simulate_mode_has_no_analytic_columns(capsys):
    assert main(["simulate", "--lambda-p", "10", "--n-s", "2", "--frames", "800"]) == 0
    (row,) = rows_of(capsys.readouterr().out)
    assert row["lambda_sat_pkts_per_s"] == "" and float(row["sim_throughput"]) > 0


def test_failed_point_reported_and_run_continues(capsys):
    status = main(["analytic", "--lambda-p", "5,800", "--n-s", "2"])
    rows = rows_of(capsys.readouterr().out)
    assert status == 1
    assert rows[0]["error"] == "" and rows[1]["error"].startswith("ConvergenceError")


def test_precedence_flag_env_file(tmp_path):
    cfg = tmp_path / "s.ini"
    cfg.write_text("[primary]\nlambda_p = 12\n[experiment]\nseed = 3\nframes = 111\nsweep_n_s = 4,6\n")
    parser = build_parser()
    plan = plan_from_args(parser.parse_args(["simulate", "--config", str(cfg)]), env={})
    assert (plan.seed, plan.frames, plan.base.lambda_p) == (3, 111, 12.0)
    assert plan.sweep == [("n_s", [4, 6])]
    env = {"COGWLAN_SEED": "8", "COGWLAN_N_S": "9"}
    plan = plan_from_args(parser.parse_args(["simulate", "--config", str(cfg)]), env=env)
    assert plan.seed == 8 and plan.sweep == [("n_s", [9])]
    plan = plan_from_args(parser.parse_args(["simulate", "--config", str(cfg), "--seed", "1"]), env=env)
    assert plan.seed == 1
    plan = plan_from_args(parser.parse_args(["sweep"]), env={"COGWLAN_MODE": "validate"})
    assert plan.mode == "validate"


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[primary]\nlambda = 3\n")
    assert main(["analytic", "--config", str(bad)]) == 2
    assert main(["analytic", "--ratio-r", "7/3"]) == 2
    assert main(["analytic", "--striping", "diagonal"]) == 2
    assert "error" in capsys.readouterr().err


def test_grid_cap():
    with pytest.raises(ConfigError):
        ExperimentPlan(base=ScenarioConfig(), sweep=[("lambda_p", [1.0, 2.0, 3.0])], max_grid=2)
    with pytest.raises(ConfigError):
        ExperimentPlan(base=ScenarioConfig(), sweep=[("w0", [4])])
    with pytest.raises(ConfigError):
        ExperimentPlan(base=ScenarioConfig(), mode="fast")


def test_parallel_matches_serial():
    sweep = [("lambda_p", [10.0, 20.0]), ("n_s", [3])]
    serial = run(ExperimentPlan(base=ScenarioConfig(), sweep=sweep), io.StringIO())[1]
    parallel = run(ExperimentPlan(base=ScenarioConfig(), sweep=sweep, jobs=2), io.StringIO())[1]
    assert serial == parallel


def test_gamma_profile(capsys):
    assert main(["gamma-profile", "--lambda-p", "25"]) == 0
    rows = rows_of(capsys.readouterr().out)
    assert len(rows) == 50
    assert [int(r["start_symbol"]) for r in rows] == list(range(1, 51))
    assert float(rows[0]["gamma_s"]) > 0


def test_module_entry_point(monkeypatch):
    import runpy
    monkeypatch.setattr("sys.argv", ["cogwlan"])
    with pytest.raises(SystemExit) as exc:
        runpy.run_module("cogwlan", run_name="__main__", alter_sys=True)
    assert exc.value.code == 2      # argparse: missing subcommand
