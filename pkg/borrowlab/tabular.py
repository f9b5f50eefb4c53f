"""
===============================================================================
TABULAR I/O
===============================================================================
CSV ingestion for trial and external-control files (NSW/PSID layout: a
binary treatment column, covariates, an outcome column) and full-precision
CSV output for generated datasets.

Every rejected cell is reported with its data row (1-based) and column.
===============================================================================
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from .core_data import ExternalPool, TrialDataset
from .errors import DataValidationError, SchemaMismatchError

LOGGER = logging.getLogger(__name__)

# =============================================================================
# CONFIGURATION
# =============================================================================

NSW_COLUMNS = ("treat", "age", "education", "black", "hispanic", "married", "nodegree",
               "re74", "re75", "re78")
DEFAULT_OUTCOME = "re78"
DEFAULT_TREAT = "treat"
OUTCOME_SCALE = 1e4
FLOAT_FORMAT = "%.17g"


@dataclass(frozen=True)
class TabularFile:
    """Rectangular numeric table with its header."""

    header: Tuple[str, ...]
    rows: NDArray
    path: str = ""

    def column(self, name: str) -> NDArray:
        return self.rows[:, self.header.index(name)]

    def __len__(self) -> int:
        return self.rows.shape[0]


# =============================================================================
# READING
# =============================================================================

def read_tabular(path: Union[str, Path]) -> TabularFile:
    """
    Read a numeric CSV with a header row.

    Raises:
        DataValidationError: missing file, no rows, missing or non-numeric cell
    """
    path = str(path)
    if not Path(path).is_file():
        raise DataValidationError(f"Data file not found: {path}", path)
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise DataValidationError("no rows", path)
    if df.empty:
        raise DataValidationError("no rows", path)

    header = tuple(str(c).strip() for c in df.columns)
    values = np.empty(df.shape, dtype=float)
    for j, col in enumerate(header):
        for i, cell in enumerate(df.iloc[:, j]):
            text = cell.strip()
            locus = f"{path}: row {i + 1}, column '{col}'"
            if text == "":
                raise DataValidationError("missing cell", locus)
            try:
                value = float(text)
            except ValueError:
                raise DataValidationError(f"non-numeric cell {text!r}", locus) from None
            if not np.isfinite(value):
                raise DataValidationError(f"non-finite cell {text!r}", locus)
            values[i, j] = value
    return TabularFile(header, values, path)


def _split_columns(table: TabularFile, outcome_col: str,
                   treat_col: Optional[str]) -> Tuple[Tuple[str, ...], NDArray, NDArray]:
    if outcome_col not in table.header:
        raise DataValidationError(f"missing outcome column '{outcome_col}'",
                                  f"{table.path}: header {list(table.header)}")
    names = tuple(c for c in table.header if c not in (outcome_col, treat_col))
    idx = [table.header.index(c) for c in names]
    return names, table.rows[:, idx], table.column(outcome_col)


def _binary_column(table: TabularFile, col: str) -> NDArray:
    values = table.column(col)
    bad = np.flatnonzero(~np.isin(values, (0.0, 1.0)))
    if bad.size:
        i = int(bad[0])
        raise DataValidationError(f"non-binary treatment value {values[i]:g}",
                                  f"{table.path}: row {i + 1}, column '{col}'")
    return values.astype(int)


def load_trial_csv(path: Union[str, Path], outcome_col: str = DEFAULT_OUTCOME,
                   treat_col: str = DEFAULT_TREAT) -> TrialDataset:
    """
    Load a trial file; every column other than outcome and treatment is a
    covariate, in header order.
    """
    table = read_tabular(path)
    if treat_col not in table.header:
        raise DataValidationError(f"missing treatment column '{treat_col}'",
                                  f"{table.path}: header {list(table.header)}")
    a = _binary_column(table, treat_col)
    names, X, y = _split_columns(table, outcome_col, treat_col)
    if not names:
        raise DataValidationError("no covariate columns", table.path)
    n_treated = int(a.sum())
    if n_treated == 0:
        raise DataValidationError("empty treated arm", f"{table.path}: column '{treat_col}'")
    if n_treated == len(a):
        raise DataValidationError("empty control arm", f"{table.path}: column '{treat_col}'")
    LOGGER.info("Loaded trial %s: %d rows (%d treated, %d control), %d covariates",
                table.path, len(a), n_treated, len(a) - n_treated, len(names))
    return TrialDataset(X, a, y, names)


def load_pool_csv(path: Union[str, Path], outcome_col: str = DEFAULT_OUTCOME,
                  treat_col: str = DEFAULT_TREAT,
                  reference: Optional[TrialDataset] = None) -> ExternalPool:
    """
    Load an external-control file. A treatment column is optional; when
    present it must be all zeros. With ``reference`` the covariate columns
    must match the trial's, in the same order.
    """
    table = read_tabular(path)
    has_treat = treat_col in table.header
    if has_treat:
        a = _binary_column(table, treat_col)
        if a.any():
            i = int(np.flatnonzero(a)[0])
            raise DataValidationError("treated row in external control file",
                                      f"{table.path}: row {i + 1}, column '{treat_col}'")
    names, X, y = _split_columns(table, outcome_col, treat_col if has_treat else None)
    if reference is not None and reference.covariate_names is not None:
        if tuple(reference.covariate_names) != names:
            raise SchemaMismatchError(
                f"covariate columns differ: trial {list(reference.covariate_names)} "
                f"vs external {list(names)}", table.path
            )
    LOGGER.info("Loaded external pool %s: %d rows, %d covariates", table.path, len(y), len(names))
    return ExternalPool(X, y, names)


# =============================================================================
# PREPROCESSING
# =============================================================================

def prepare_real_data(trial: TrialDataset, pool: ExternalPool, standardize: bool = True,
                      outcome_scale: float = OUTCOME_SCALE) -> Tuple[TrialDataset, ExternalPool]:
    """
    Center and scale covariates by trial statistics and divide outcomes by
    outcome_scale. Constant trial columns are centered only.
    """
    X, Xp = trial.X, pool.X
    if standardize:
        center = trial.X.mean(axis=0)
        scale = trial.X.std(axis=0, ddof=1) if trial.n > 1 else np.ones(trial.d)
        scale = np.where(scale > 0, scale, 1.0)
        X = (trial.X - center) / scale
        Xp = (pool.X - center) / scale
    trial_out = TrialDataset(X, trial.a, trial.y / outcome_scale, trial.covariate_names)
    pool_out = ExternalPool(Xp, pool.y / outcome_scale, pool.covariate_names, pool.period)
    return trial_out, pool_out


# =============================================================================
# WRITING
# =============================================================================

def dataset_frame(X: NDArray, y: NDArray, a: NDArray, names: Optional[Sequence[str]] = None,
                  outcome_col: str = "y", treat_col: str = DEFAULT_TREAT) -> pd.DataFrame:
    names = list(names) if names else [f"x{j + 1}" for j in range(X.shape[1])]
    df = pd.DataFrame(X, columns=names)
    df.insert(0, treat_col, np.asarray(a, dtype=int))
    df[outcome_col] = y
    return df


def write_trial_csv(path: Union[str, Path], trial: TrialDataset, outcome_col: str = "y",
                    treat_col: str = DEFAULT_TREAT) -> None:
    dataset_frame(trial.X, trial.y, trial.a, trial.covariate_names, outcome_col, treat_col) \
        .to_csv(path, index=False, float_format=FLOAT_FORMAT)


def write_pool_csv(path: Union[str, Path], pool: ExternalPool, outcome_col: str = "y",
                   treat_col: str = DEFAULT_TREAT) -> None:
    dataset_frame(pool.X, pool.y, pool.a, pool.covariate_names, outcome_col, treat_col) \
        .to_csv(path, index=False, float_format=FLOAT_FORMAT)
