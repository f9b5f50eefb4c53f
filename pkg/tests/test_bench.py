import json

import numpy as np
import pandas as pd
import pytest

from borrowlab.bench import (
    METRIC_COLUMNS,
    RealData,
    run_monte_carlo,
    run_real_data,
    run_replication,
    summarize,
    sweep_control_n,
    sweep_shift,
)
from borrowlab.config import BorrowConfig
from borrowlab.errors import ConfigError, DataValidationError
from borrowlab.simgen import generate, make_scenario


@pytest.fixture
def tiny():
    return make_scenario("linear", seed=21, n_treated=60, n_control=40, n_pool=60)


def _records(taus, method="aipw", k=10):
    return pd.DataFrame({
        "rep": range(len(taus)),
        "method": method,
        "k_rule": "fixed",
        "k": k,
        "tau_hat": taus,
        "se_hat": 0.1,
        "k_star": 0,
        "error": ["" if np.isfinite(t) else "failed" for t in taus],
    })


def test_bias_modes():
    records = _records([1.0, 3.0])
    assert summarize(records, 2.0, 2, "abs-mean").loc[0, "mc_bias"] == pytest.approx(0.0)
    assert summarize(records, 2.0, 2, "mean-abs").loc[0, "mc_bias"] == pytest.approx(1.0)
    row = summarize(records, 2.0, 2).iloc[0]
    assert row["mc_std"] == pytest.approx(np.sqrt(2.0))
    assert row["mc_mse"] == pytest.approx(1.0)


def test_rows_abort_above_failure_budget():
    taus = [1.0] * 18 + [np.nan] * 2
    table = summarize(_records(taus), 1.0, 20)
    assert table.loc[0, "status"] == "aborted"
    assert table.loc[0, "n_failed"] == 2

    ok = summarize(_records([1.0, 1.2] * 10), 1.0, 20)
    assert ok.loc[0, "status"] == "ok"


def test_replication_records_cover_the_plan(tiny):
    records = run_replication(tiny, 0, 5, ("aipw", "if"), (5, 20), BorrowConfig())
    keys = {(r["method"], r["k_rule"], r["k"]) for r in records}
    assert keys == {("aipw", "fixed", 5), ("aipw", "fixed", 20),
                    ("if", "fixed", 5), ("if", "fixed", 20), ("if", "mse", None)}
    aipw = [r for r in records if r["method"] == "aipw"]
    assert aipw[0]["tau_hat"] == aipw[1]["tau_hat"]
    assert all(r["error"] == "" for r in records)


def test_monte_carlo_table_is_deterministic(tiny):
    kwargs = dict(methods=("aipw", "full", "if"), k_list=(10,), reps=4, base_seed=7)
    first = run_monte_carlo(tiny, **kwargs)
    second = run_monte_carlo(tiny, **kwargs)
    pd.testing.assert_frame_equal(first.table, second.table)
    assert list(first.table.columns) == METRIC_COLUMNS
    assert len(first.table) == 4
    assert first.row("if")["k_rule"] == "mse"
    assert first.row("aipw", 10)["n_reps"] == 4
    assert first.row("full", 10)["mean_k_star"] == 60
    assert first.tau_true == pytest.approx(tiny.alpha[0])


def test_parallel_replications_match_serial(tiny):
    kwargs = dict(methods=("aipw", "if"), k_list=(10,), reps=3, base_seed=1, select=False)
    serial = run_monte_carlo(tiny, **kwargs)
    parallel = run_monte_carlo(tiny, n_jobs=2, **kwargs)
    pd.testing.assert_frame_equal(serial.table, parallel.table)


def test_control_subsampling(tiny):
    table = run_monte_carlo(tiny, methods=("aipw",), reps=3, control_n=20)
    assert table.tags["control_n"] == 20
    with pytest.raises(DataValidationError):
        run_monte_carlo(tiny, methods=("aipw",), reps=3, control_n=41)


def test_bad_arguments(tiny):
    with pytest.raises(ConfigError):
        run_monte_carlo(tiny, methods=("aipw",), reps=1)
    with pytest.raises(ConfigError):
        run_monte_carlo(tiny, methods=("bootstrap",), reps=3)
    with pytest.raises(ConfigError):
        run_monte_carlo(tiny, methods=("aipw",), reps=3, bias_mode="median")


def test_real_data_uses_full_trial_aipw_as_reference(tiny):
    trial, pool = generate(tiny)
    table = run_real_data(trial, pool, control_n=30, reps=3, methods=("aipw", "full"),
                          k_list=(10,))
    assert table.tags == {"mechanism": "real", "control_n": 30}
    assert table.scenario == RealData(trial, pool).digest()
    assert table.row("aipw", 10)["status"] == "ok"
    with pytest.raises(DataValidationError):
        run_real_data(trial, pool, control_n=500, reps=3)


def test_shift_sweep_tags(tiny):
    tables = sweep_shift(tiny, [0.0, 0.5], methods=("aipw",), reps=2)
    assert [t.tags["mu2"] for t in tables] == [0.0, 0.5]


def test_serialization(tiny, tmp_path):
    table = run_monte_carlo(tiny, methods=("aipw", "if"), k_list=(5, 15), reps=3)
    table.to_csv(str(tmp_path / "metrics.csv"))
    table.to_json(str(tmp_path / "metrics.json"))

    csv = pd.read_csv(tmp_path / "metrics.csv")
    assert {"mc_bias", "mc_std", "mc_mse", "tau_true", "mechanism"} <= set(csv.columns)
    payload = json.loads((tmp_path / "metrics.json").read_text())
    assert payload["tau_true"] == table.tau_true
    assert len(payload["rows"]) == len(table.table)

    curves = table.curves()
    assert list(curves.columns) == ["method", "k", "mc_mse", "mc_bias", "mc_std"]
    assert set(curves["k"]) == {5, 15}


@pytest.mark.slow
def test_full_borrowing_mse_grows_with_covariate_shift():
    mu2_grid = (0.2, 0.3, 0.4)
    monotone = 0
    for seed in range(3):
        # pool discrepancy delta + mu2 * sum(beta * (dbeta - 1)) rises with mu2
        sc = make_scenario("linear", seed=seed, beta=np.ones(8), delta_beta=np.full(8, 1.2))
        tables = sweep_shift(sc, mu2_grid, methods=("full",), k_list=(0,), reps=200,
                             select=False, n_jobs=-1)
        mse = [t.row("full", 0)["mc_mse"] for t in tables]
        monotone += int(np.all(np.diff(mse) >= 0))
    assert monotone >= 2


@pytest.mark.slow
def test_aipw_spread_grows_as_the_control_arm_shrinks():
    sc = make_scenario("linear", seed=61)
    tables = sweep_control_n(sc, (30, 60, 90), methods=("aipw",), k_list=(0,), reps=1000,
                             select=False, n_jobs=-1)
    assert [t.tags["control_n"] for t in tables] == [30, 60, 90]
    std = [t.row("aipw", 0)["mc_std"] for t in tables]
    assert std[0] > std[1] > std[2]


def test_full_size_control_sweep_matches_plain_run(tiny):
    kwargs = dict(methods=("aipw",), k_list=(0,), reps=3, base_seed=2, select=False)
    swept = sweep_control_n(tiny, (tiny.n_control,), **kwargs)[0]
    plain = run_monte_carlo(tiny, **kwargs)
    assert swept.row("aipw", 0)["mc_mse"] == pytest.approx(plain.row("aipw", 0)["mc_mse"],
                                                           rel=1e-12)
