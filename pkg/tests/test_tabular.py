import numpy as np
import pytest

from borrowlab.errors import DataValidationError, SchemaMismatchError
from borrowlab.simgen import generate, make_scenario
from borrowlab.tabular import (
    NSW_COLUMNS,
    load_pool_csv,
    load_trial_csv,
    prepare_real_data,
    read_tabular,
    write_pool_csv,
    write_trial_csv,
)


def _nsw_rows(n, treated, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n):
        treat = 1 if treated is None and i % 2 else (treated or 0)
        rows.append([treat, rng.integers(17, 55), rng.integers(3, 17), rng.integers(0, 2),
                     rng.integers(0, 2), rng.integers(0, 2), rng.integers(0, 2),
                     round(rng.uniform(0, 20000), 2), round(rng.uniform(0, 20000), 2),
                     round(rng.uniform(0, 30000), 2)])
    return rows


def _write(path, header, rows):
    lines = [",".join(header)] + [",".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def nsw(tmp_path):
    return _write(tmp_path / "nsw.csv", NSW_COLUMNS, _nsw_rows(40, None))


@pytest.fixture
def psid(tmp_path):
    return _write(tmp_path / "psid.csv", NSW_COLUMNS, _nsw_rows(123, 0, seed=1))


def test_nsw_layout_gives_eight_covariates(nsw):
    trial = load_trial_csv(nsw)
    assert trial.d == 8
    assert trial.covariate_names == NSW_COLUMNS[1:-1]
    assert trial.n == 40 and trial.n_treated == 20


def test_psid_pool_loads(nsw, psid):
    trial = load_trial_csv(nsw)
    pool = load_pool_csv(psid, reference=trial)
    assert len(pool) == 123
    assert np.all(pool.a == 0)


def test_pool_without_treatment_column(tmp_path):
    header = [c for c in NSW_COLUMNS if c != "treat"]
    rows = [row[1:] for row in _nsw_rows(5, 0)]
    pool = load_pool_csv(_write(tmp_path / "ext.csv", header, rows))
    assert len(pool) == 5 and pool.d == 8


def test_treated_external_row_rejected(tmp_path):
    rows = _nsw_rows(6, 0)
    rows[4][0] = 1
    with pytest.raises(DataValidationError) as info:
        load_pool_csv(_write(tmp_path / "ext.csv", NSW_COLUMNS, rows))
    assert "row 5" in info.value.locus


def test_non_binary_treatment_names_the_row(tmp_path):
    rows = _nsw_rows(6, None)
    rows[1][0] = 2
    with pytest.raises(DataValidationError) as info:
        load_trial_csv(_write(tmp_path / "rct.csv", NSW_COLUMNS, rows))
    assert "row 2" in info.value.locus and "treat" in info.value.locus


@pytest.mark.parametrize("content", ["", "treat,x,re78\n"])
def test_files_without_rows_rejected(tmp_path, content):
    path = tmp_path / "empty.csv"
    path.write_text(content)
    with pytest.raises(DataValidationError, match="no rows"):
        read_tabular(path)


def test_missing_and_non_numeric_cells(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("treat,x,re78\n1,0.5,3\n0,,4\n")
    with pytest.raises(DataValidationError, match="missing cell") as info:
        read_tabular(path)
    assert info.value.locus.endswith("row 2, column 'x'")

    path.write_text("treat,x,re78\n1,abc,3\n0,1,4\n")
    with pytest.raises(DataValidationError, match="non-numeric"):
        read_tabular(path)


def test_missing_file_and_columns(tmp_path, nsw):
    with pytest.raises(DataValidationError):
        load_trial_csv(tmp_path / "absent.csv")
    with pytest.raises(DataValidationError, match="outcome"):
        load_trial_csv(nsw, outcome_col="re79")


def test_empty_arm_rejected(tmp_path):
    with pytest.raises(DataValidationError, match="empty treated arm"):
        load_trial_csv(_write(tmp_path / "rct.csv", NSW_COLUMNS, _nsw_rows(5, 0)))


def test_schema_mismatch_lists_both_headers(tmp_path, nsw):
    trial = load_trial_csv(nsw)
    swapped = list(NSW_COLUMNS)
    swapped[1], swapped[2] = swapped[2], swapped[1]
    path = _write(tmp_path / "ext.csv", swapped, _nsw_rows(5, 0))
    with pytest.raises(SchemaMismatchError) as info:
        load_pool_csv(path, reference=trial)
    assert "'age', 'education'" in info.value.message
    assert "'education', 'age'" in info.value.message


def test_written_datasets_reload_bitwise(tmp_path):
    trial, pool = generate(make_scenario("linear", seed=17, n_pool=50))
    write_trial_csv(tmp_path / "trial.csv", trial)
    write_pool_csv(tmp_path / "external.csv", pool)

    trial2 = load_trial_csv(tmp_path / "trial.csv", outcome_col="y")
    pool2 = load_pool_csv(tmp_path / "external.csv", outcome_col="y", reference=trial2)
    assert np.array_equal(trial.X, trial2.X)
    assert np.array_equal(trial.y, trial2.y)
    assert np.array_equal(trial.a, trial2.a)
    assert np.array_equal(pool.X, pool2.X) and np.array_equal(pool.y, pool2.y)


def test_real_data_preparation(nsw, psid):
    trial = load_trial_csv(nsw)
    pool = load_pool_csv(psid, reference=trial)
    scaled_trial, scaled_pool = prepare_real_data(trial, pool)
    assert np.allclose(scaled_trial.X.mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(scaled_trial.X.std(axis=0, ddof=1), 1.0)
    assert np.allclose(scaled_trial.y, trial.y / 1e4)
    assert scaled_pool.covariate_names == trial.covariate_names

    raw_trial, _ = prepare_real_data(trial, pool, standardize=False)
    assert np.array_equal(raw_trial.X, trial.X)
