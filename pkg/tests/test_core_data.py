import numpy as np
import pytest

from borrowlab.core_data import (
    ExternalPool,
    FeatureMap,
    Sample,
    TrialDataset,
    combine,
    describe,
    empty_pool,
    expand,
    subsample_controls,
    validate,
)
from borrowlab.errors import DataValidationError


def _trial(n=10, d=2, seed=0):
    rng = np.random.default_rng(seed)
    a = np.array([0, 1] * (n // 2))
    return TrialDataset(rng.normal(size=(n, d)), a, rng.normal(size=n))


def test_containers_are_read_only():
    trial = _trial()
    with pytest.raises(ValueError):
        trial.X[0, 0] = 1.0
    with pytest.raises(ValueError):
        trial.controls.y[0] = 1.0


def test_external_sample_must_be_untreated():
    with pytest.raises(DataValidationError):
        Sample(np.zeros(2), a=1, y=0.0, r=0)
    assert Sample(np.zeros(2), a=1, y=0.0, r=1).a == 1


def test_trial_length_mismatch_rejected():
    with pytest.raises(DataValidationError):
        TrialDataset(np.zeros((4, 2)), [0, 1, 0], np.zeros(4))


def test_arms_and_views():
    trial = _trial(n=10)
    assert trial.n_treated == 5 and trial.n_control == 5
    assert len(trial.controls) == 5
    assert all(s.r == 1 for s in trial.samples)
    assert np.array_equal(trial.controls.X, trial.X[trial.a == 0])


def test_validate_reports_without_raising():
    X = np.zeros((4, 2))
    report = validate(TrialDataset(X, [1, 1, 1, 1], np.zeros(4)))
    assert not report.ok
    assert "empty control arm" in report.violations

    pool = ExternalPool(np.zeros((3, 2)), np.zeros(3), a=[0, 1, 0])
    report = validate(_trial(), pool)
    assert "treated external sample at pool index 1" in report.violations
    with pytest.raises(DataValidationError):
        report.raise_if_invalid()


def test_validate_dimension_mismatch():
    pool = ExternalPool(np.zeros((3, 5)), np.zeros(3))
    report = validate(_trial(d=2), pool)
    assert any(v.startswith("dimension mismatch") for v in report.violations)
    assert validate(_trial(), empty_pool(2)).ok


def test_feature_map_polynomial_columns():
    fm = FeatureMap.polynomial(3, 2)
    assert fm.d_out == 7
    x = np.array([1.0, 2.0, -3.0])
    assert np.array_equal(expand(fm, x), [1.0, 1.0, 2.0, -3.0, 1.0, 4.0, 9.0])
    assert FeatureMap.linear(3).design(np.ones((5, 3))).shape == (5, 4)


def test_feature_map_dimension_checked():
    with pytest.raises(DataValidationError):
        expand(FeatureMap.linear(2), np.zeros(3))


def test_combine_and_q_hat():
    trial = _trial(n=10)
    pool = ExternalPool(np.ones((6, 2)), np.arange(6.0))
    comb = combine(trial, pool, [4, 1])
    assert comb.n == 12
    assert comb.q_hat == pytest.approx(10 / 12)
    assert np.array_equal(comb.y[-2:], [4.0, 1.0])
    assert np.array_equal(comb.r, [1] * 10 + [0, 0])
    assert np.array_equal(comb.a[-2:], [0, 0])


@pytest.mark.parametrize("indices", [[0, 0], [6], [-1]])
def test_combine_rejects_bad_indices(indices):
    with pytest.raises(DataValidationError):
        combine(_trial(), ExternalPool(np.ones((6, 2)), np.zeros(6)), indices)


def test_subsample_controls_keeps_treated_arm():
    trial = _trial(n=40)
    small = subsample_controls(trial, 7, np.random.default_rng(1))
    assert small.n_control == 7
    assert small.n_treated == trial.n_treated
    again = subsample_controls(trial, 7, np.random.default_rng(1))
    assert np.array_equal(small.X, again.X)
    with pytest.raises(DataValidationError):
        subsample_controls(trial, 100, np.random.default_rng(1))


def test_describe_reports_pool_shift():
    trial = _trial(n=200, d=2)
    rng = np.random.default_rng(3)
    pool = ExternalPool(rng.normal(1.0, 1.0, size=(300, 2)), rng.normal(size=300))
    table = describe(trial, pool)
    assert list(table["covariate"]) == ["x1", "x2"]
    assert (table["smd_pool_vs_trial"] > 0.5).all()
