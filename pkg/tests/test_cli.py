import json

import numpy as np
import pytest

from borrowlab.cli import RunConfig, build_parser, main, parse_topk, resolve_config
from borrowlab.errors import ConfigError
from borrowlab.simgen import generate, make_scenario, outlier_indices
from borrowlab.tabular import load_pool_csv, load_trial_csv


def _error_record(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])["error"]


def test_estimate_aipw_writes_report(tmp_path):
    out = tmp_path / "aipw.json"
    assert main(["estimate", "--scenario", "linear", "--method", "aipw", "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["method"] == "aipw"
    assert {"tau_hat", "se_hat", "ci95_lower", "ci95_upper"} <= set(report)


def test_estimate_fixed_k_csv(tmp_path):
    out = tmp_path / "if.csv"
    argv = ["estimate", "--scenario", "oneD", "--method", "if", "--topk", "25",
            "--format", "csv", "--out", str(out)]
    assert main(argv) == 0
    header, row = out.read_text().strip().splitlines()
    assert header.split(",")[:3] == ["method", "tau_hat", "se_hat"]
    assert row.startswith("if,")


def test_simulate_round_trip(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--scenario", "linear", "--seed", "4", "--out", str(out)]) == 0
    trial, pool = generate(make_scenario("linear", seed=4))
    trial2 = load_trial_csv(out / "trial.csv", outcome_col="y")
    pool2 = load_pool_csv(out / "external.csv", outcome_col="y")
    assert np.array_equal(trial.X, trial2.X) and np.array_equal(trial.y, trial2.y)
    assert np.array_equal(pool.y, pool2.y)
    assert (out / "covariates.csv").exists()
    meta = json.loads((out / "scenario.json").read_text())
    assert meta["mechanism"] == "linear" and meta["seed"] == 4


def test_borrow_excludes_one_d_outliers(tmp_path):
    out = tmp_path / "borrow"
    assert main(["borrow", "--scenario", "oneD", "--out", str(out)]) == 0
    selected = json.loads((out / "selected.json").read_text())
    _, pool = generate(make_scenario("oneD"))
    assert not set(selected["selected"]) & set(outlier_indices(pool).tolist())
    assert selected["k_rule"] == "mse"

    ranking = json.loads((out / "ranking.json").read_text())
    assert len(ranking["ranking"]) == len(pool)
    assert (out / "profile.csv").read_text().startswith("k,tau_hat")


def test_benchmark_is_reproducible(tmp_path):
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for path in paths:
        argv = ["benchmark", "--scenario", "linear", "--reps", "3", "--seed", "7",
                "--method", "aipw", "--format", "csv", "--plot-data", "--out", str(path)]
        assert main(argv) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert (tmp_path / "a_curves.csv").exists()


def test_missing_file_is_a_data_error(tmp_path, capsys):
    code = main(["estimate", "--rct", str(tmp_path / "nope.csv"),
                 "--external", str(tmp_path / "nope2.csv")])
    assert code == 3
    record = _error_record(capsys)
    assert record["code"] == "data-invalid"
    assert record["locus"].endswith("nope.csv")


def test_two_data_sources_is_a_config_error(tmp_path, capsys):
    path = tmp_path / "x.csv"
    path.write_text("treat,x,re78\n1,0,1\n0,1,2\n")
    code = main(["estimate", "--scenario", "linear", "--rct", str(path), "--external", str(path)])
    assert code == 2
    assert _error_record(capsys)["code"] == "config-invalid"


def test_config_file_precedence(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("# benchmark defaults\nreps = 3\nmethod = aipw\ncontrol-n = 50\ndamping = 1e-4\n")
    args = build_parser().parse_args(["benchmark", "--scenario", "linear", "--config",
                                      str(cfg_file), "--reps", "2"])
    cfg = resolve_config(args)
    assert cfg.reps == 2
    assert cfg.method == "aipw"
    assert cfg.control_n == 50
    assert cfg.borrow_overrides == {"damping": 1e-4}


def test_unknown_config_key(tmp_path, capsys):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("colour = blue\n")
    assert main(["estimate", "--scenario", "linear", "--config", str(cfg_file)]) == 2
    assert _error_record(capsys)["code"] == "config-invalid"


def test_topk_parsing():
    assert parse_topk(None) is None
    assert parse_topk("auto") is None
    assert parse_topk("50,100") == [50, 100]
    with pytest.raises(ConfigError):
        parse_topk("ten")
    with pytest.raises(ConfigError):
        RunConfig(command="simulate")


def test_usage_errors_become_config_records(capsys):
    assert main(["estimate", "--scenario", "bogus"]) == 2
    record = _error_record(capsys)
    assert record["code"] == "config-invalid"
    assert "bogus" in record["message"]

    assert main(["estimate", "--reps", "many", "--scenario", "linear"]) == 2
    assert _error_record(capsys)["code"] == "config-invalid"


def test_output_path_collision_is_an_io_error(tmp_path, capsys):
    blocker = tmp_path / "taken"
    blocker.write_text("not a directory\n")
    assert main(["simulate", "--scenario", "oneD", "--out", str(blocker)]) == 6
    record = _error_record(capsys)
    assert record["code"] == "io-failed"
    assert record["locus"].endswith("taken")


def test_outcome_scale_follows_outcome_column(tmp_path):
    assert RunConfig(command="simulate", scenario="linear").outcome_divisor == 1e4
    assert RunConfig(command="simulate", scenario="linear", outcome="y").outcome_divisor == 1.0
    cfg = RunConfig(command="simulate", scenario="linear", outcome="y", outcome_scale=100.0)
    assert cfg.outcome_divisor == 100.0
    with pytest.raises(ConfigError):
        RunConfig(command="simulate", scenario="linear", outcome_scale=0.0)


def test_simulated_files_estimate_in_original_units(tmp_path):
    data = tmp_path / "sim"
    assert main(["simulate", "--scenario", "linear", "--seed", "2", "--out", str(data)]) == 0
    common = ["--method", "aipw", "--outcome", "y", "--no-standardize"]
    from_files = tmp_path / "files.json"
    argv = ["estimate", "--rct", str(data / "trial.csv"), "--external", str(data / "external.csv"),
            "--out", str(from_files)] + common
    assert main(argv) == 0
    direct = tmp_path / "direct.json"
    assert main(["estimate", "--scenario", "linear", "--seed", "2", "--out", str(direct),
                 "--method", "aipw"]) == 0

    tau_files = json.loads(from_files.read_text())["tau_hat"]
    tau_direct = json.loads(direct.read_text())["tau_hat"]
    assert tau_files == pytest.approx(tau_direct, rel=1e-9)

    scaled = tmp_path / "scaled.json"
    assert main(["estimate", "--rct", str(data / "trial.csv"), "--external",
                 str(data / "external.csv"), "--out", str(scaled), "--outcome-scale", "10"]
                + common) == 0
    assert json.loads(scaled.read_text())["tau_hat"] == pytest.approx(tau_files / 10, rel=1e-9)
