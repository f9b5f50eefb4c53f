"""
===============================================================================
CORE DATA: TRIAL, EXTERNAL POOL, COMBINED POPULATION, FEATURE MAP
===============================================================================
Observed-data model for a randomized trial (source r = 1) and an external
control pool (source r = 0, untreated by construction).

Containers are frozen dataclasses over read-only numpy arrays so they can be
shared between Monte Carlo workers without copying.

This module provides:
    - Sample / TrialDataset / ControlArm / ExternalPool / CombinedDataset
    - FeatureMap (intercept + univariate monomials)
    - validate(): report-style checks
    - combine(): trial followed by borrowed pool samples
    - describe(): covariate balance table (trial arms vs pool)
===============================================================================
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Protocol, Sequence, Tuple

import numpy as np
import pandas as pd
import statsmodels.api as sm
from numpy.typing import NDArray

from .errors import DataValidationError

LOGGER = logging.getLogger(__name__)


def _frozen(values, dtype=float, ndim: int = 1) -> NDArray:
    arr = np.array(values, dtype=dtype, copy=True)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(-1, 1) if arr.size else arr.reshape(0, 0)
    arr.setflags(write=False)
    return arr


# =============================================================================
# SAMPLES AND DATASETS
# =============================================================================

@dataclass(frozen=True)
class Sample:
    """One observation: covariates x, treatment a, outcome y, source r."""

    x: NDArray
    a: int
    y: float
    r: int

    def __post_init__(self):
        object.__setattr__(self, "x", _frozen(self.x))
        if self.r == 0 and self.a != 0:
            raise DataValidationError("External samples must be untreated (r=0 implies a=0)")
        if not (np.all(np.isfinite(self.x)) and np.isfinite(self.y)):
            raise DataValidationError("Sample contains non-finite values")


class OutcomeBlock(Protocol):
    """Anything exposing covariates X (n, d) and outcomes y (n,)."""

    X: NDArray
    y: NDArray


@dataclass(frozen=True)
class ControlArm:
    """Read-only view of the trial's control arm."""

    X: NDArray
    y: NDArray

    def __len__(self) -> int:
        return self.y.shape[0]

    def sample(self, i: int) -> Sample:
        return Sample(self.X[i], 0, float(self.y[i]), 1)


@dataclass(frozen=True)
class TrialDataset:
    """
    Randomized trial data.

    Shapes are checked on construction; semantic conditions (both arms
    populated, finiteness) are reported by validate() so that loaders and
    tests can inspect a broken dataset.
    """

    X: NDArray
    a: NDArray
    y: NDArray
    covariate_names: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        X = _frozen(self.X, ndim=2)
        a = _frozen(self.a, dtype=int)
        y = _frozen(self.y)
        if X.ndim != 2 or X.shape[0] != a.shape[0] or a.shape[0] != y.shape[0]:
            raise DataValidationError(
                f"Trial arrays disagree in length: X {X.shape}, a {a.shape}, y {y.shape}"
            )
        if self.covariate_names is not None and len(self.covariate_names) != X.shape[1]:
            raise DataValidationError("covariate_names length does not match X columns")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "y", y)
        if self.covariate_names is not None:
            object.__setattr__(self, "covariate_names", tuple(self.covariate_names))

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def __len__(self) -> int:
        return self.n

    @property
    def n_treated(self) -> int:
        return int(np.sum(self.a == 1))

    @property
    def n_control(self) -> int:
        return int(np.sum(self.a == 0))

    @property
    def controls(self) -> ControlArm:
        mask = self.a == 0
        return ControlArm(_frozen(self.X[mask], ndim=2), _frozen(self.y[mask]))

    @property
    def treated(self) -> ControlArm:
        mask = self.a == 1
        return ControlArm(_frozen(self.X[mask], ndim=2), _frozen(self.y[mask]))

    @property
    def samples(self) -> List[Sample]:
        return [Sample(self.X[i], int(self.a[i]), float(self.y[i]), 1) for i in range(self.n)]


@dataclass(frozen=True)
class ExternalPool:
    """
    External controls. ``period`` is the concurrency period T of each sample
    when known (simulated data); it never enters a model.
    """

    X: NDArray
    y: NDArray
    covariate_names: Optional[Tuple[str, ...]] = None
    period: Optional[NDArray] = None
    a: Optional[NDArray] = None

    def __post_init__(self):
        X = _frozen(self.X, ndim=2)
        y = _frozen(self.y)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise DataValidationError(f"Pool arrays disagree in length: X {X.shape}, y {y.shape}")
        a = _frozen(np.zeros(y.shape[0], dtype=int) if self.a is None else self.a, dtype=int)
        if a.shape[0] != y.shape[0]:
            raise DataValidationError("Pool treatment column length does not match y")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "a", a)
        if self.period is not None:
            object.__setattr__(self, "period", _frozen(self.period, dtype=int))
        if self.covariate_names is not None:
            object.__setattr__(self, "covariate_names", tuple(self.covariate_names))

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.y.shape[0]

    def sample(self, j: int) -> Sample:
        return Sample(self.X[j], 0, float(self.y[j]), 0)

    def take(self, indices: Sequence[int]) -> "ExternalPool":
        idx = np.asarray(indices, dtype=int)
        period = None if self.period is None else self.period[idx]
        return ExternalPool(self.X[idx], self.y[idx], self.covariate_names, period)


def empty_pool(d: int) -> ExternalPool:
    return ExternalPool(np.empty((0, d)), np.empty(0))


# =============================================================================
# FEATURE MAP
# =============================================================================

@dataclass(frozen=True)
class FeatureMap:
    """
    Basis expansion: (1, x) for 'linear', (1, x, x^2, ..., x^degree) for
    'polynomial' (univariate powers, no cross terms).
    """

    kind: str
    d_in: int
    degree: int = 1
    d_out: int = field(init=False)

    def __post_init__(self):
        if self.kind not in ("linear", "polynomial"):
            raise ValueError(f"Unknown feature map kind: {self.kind}")
        if self.kind == "linear" and self.degree != 1:
            raise ValueError("Linear feature map has degree 1")
        object.__setattr__(self, "d_out", 1 + self.d_in * self.degree)

    @classmethod
    def linear(cls, d_in: int) -> "FeatureMap":
        return cls("linear", d_in, 1)

    @classmethod
    def polynomial(cls, d_in: int, degree: int) -> "FeatureMap":
        return cls("polynomial", d_in, degree)

    def design(self, X: NDArray) -> NDArray:
        """Expand a covariate matrix (n, d_in) to the design matrix (n, d_out)."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.d_in:
            raise DataValidationError(
                f"Feature map expects {self.d_in} covariates, got {X.shape[1]}"
            )
        blocks = [X ** power for power in range(1, self.degree + 1)]
        return sm.add_constant(np.hstack(blocks), prepend=True, has_constant="add")


def expand(fm: FeatureMap, x) -> NDArray:
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != fm.d_in:
        raise DataValidationError(f"Feature map expects {fm.d_in} covariates, got {x.shape[0]}")
    return fm.design(x.reshape(1, -1))[0]


# =============================================================================
# VALIDATION AND COMBINATION
# =============================================================================

@dataclass(frozen=True)
class ValidationReport:
    violations: Tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def raise_if_invalid(self) -> None:
        if self.violations:
            raise DataValidationError("; ".join(self.violations), "dataset")


def validate(trial: TrialDataset, pool: Optional[ExternalPool] = None) -> ValidationReport:
    """Report-style checks; never raises."""
    problems: List[str] = []
    if trial.n_treated == 0:
        problems.append("empty treated arm")
    if trial.n_control == 0:
        problems.append("empty control arm")
    if not np.all(np.isin(trial.a, (0, 1))):
        problems.append("non-binary treatment in trial")
    if not (np.all(np.isfinite(trial.X)) and np.all(np.isfinite(trial.y))):
        problems.append("non-finite value in trial")

    if pool is not None:
        if len(pool) and pool.d != trial.d:
            problems.append(f"dimension mismatch: trial d={trial.d}, pool d={pool.d}")
        if np.any(pool.a != 0):
            first = int(np.flatnonzero(pool.a != 0)[0])
            problems.append(f"treated external sample at pool index {first}")
        if not (np.all(np.isfinite(pool.X)) and np.all(np.isfinite(pool.y))):
            problems.append("non-finite value in pool")
    return ValidationReport(tuple(problems))


@dataclass(frozen=True)
class CombinedDataset:
    """Trial samples first, then borrowed pool samples in the given order."""

    trial: TrialDataset
    pool: ExternalPool
    borrowed: Tuple[int, ...]

    @property
    def n_borrowed(self) -> int:
        return len(self.borrowed)

    @property
    def n(self) -> int:
        return self.trial.n + self.n_borrowed

    @property
    def q_hat(self) -> float:
        return self.trial.n / (self.trial.n + self.n_borrowed)

    @property
    def X(self) -> NDArray:
        idx = np.asarray(self.borrowed, dtype=int)
        return np.vstack([self.trial.X, self.pool.X[idx]])

    @property
    def y(self) -> NDArray:
        idx = np.asarray(self.borrowed, dtype=int)
        return np.concatenate([self.trial.y, self.pool.y[idx]])

    @property
    def a(self) -> NDArray:
        return np.concatenate([self.trial.a, np.zeros(self.n_borrowed, dtype=int)])

    @property
    def r(self) -> NDArray:
        return np.concatenate([np.ones(self.trial.n, dtype=int), np.zeros(self.n_borrowed, dtype=int)])


def check_indices(indices: Sequence[int], n_pool: int) -> Tuple[int, ...]:
    seen = set()
    out = []
    for raw in indices:
        j = int(raw)
        if j < 0 or j >= n_pool:
            raise DataValidationError(f"Pool index {j} out of range [0, {n_pool})", f"index {j}")
        if j in seen:
            raise DataValidationError(f"Duplicate pool index {j}", f"index {j}")
        seen.add(j)
        out.append(j)
    return tuple(out)


def combine(trial: TrialDataset, pool: ExternalPool, indices: Sequence[int]) -> CombinedDataset:
    return CombinedDataset(trial, pool, check_indices(indices, len(pool)))


def subsample_controls(trial: TrialDataset, n_control: int, rng: np.random.Generator) -> TrialDataset:
    """Keep every treated unit and n_control controls drawn without replacement."""
    control_idx = np.flatnonzero(trial.a == 0)
    if n_control > control_idx.size:
        raise DataValidationError(
            f"Requested {n_control} controls but the trial has {control_idx.size}", "control_n"
        )
    if n_control < 1:
        raise DataValidationError("control_n must be at least 1", "control_n")
    chosen = rng.choice(control_idx, size=n_control, replace=False)
    keep = np.sort(np.concatenate([np.flatnonzero(trial.a == 1), chosen]))
    return TrialDataset(trial.X[keep], trial.a[keep], trial.y[keep], trial.covariate_names)


# =============================================================================
# DESCRIPTIVES
# =============================================================================

def describe(trial: TrialDataset, pool: ExternalPool) -> pd.DataFrame:
    """
    Covariate balance table.

    Returns:
        DataFrame with one row per covariate: means and SDs for trial controls,
        trial treated and the pool, plus the standardized mean difference of
        the pool against the whole trial.
    """
    names = trial.covariate_names or tuple(f"x{j + 1}" for j in range(trial.d))
    ctrl = trial.X[trial.a == 0]
    trt = trial.X[trial.a == 1]
    rows = []
    for j, name in enumerate(names):
        trial_sd = trial.X[:, j].std(ddof=1) if trial.n > 1 else np.nan
        pool_col = pool.X[:, j] if len(pool) else np.array([])
        pool_sd = pool_col.std(ddof=1) if pool_col.size > 1 else np.nan
        pooled = np.sqrt((trial_sd ** 2 + pool_sd ** 2) / 2) if pool_col.size > 1 else np.nan
        smd = (pool_col.mean() - trial.X[:, j].mean()) / pooled if pooled and pooled > 0 else np.nan
        rows.append({
            "covariate": name,
            "control_mean": ctrl[:, j].mean() if len(ctrl) else np.nan,
            "control_sd": ctrl[:, j].std(ddof=1) if len(ctrl) > 1 else np.nan,
            "treated_mean": trt[:, j].mean() if len(trt) else np.nan,
            "treated_sd": trt[:, j].std(ddof=1) if len(trt) > 1 else np.nan,
            "pool_mean": pool_col.mean() if pool_col.size else np.nan,
            "pool_sd": pool_sd,
            "smd_pool_vs_trial": smd,
        })
    return pd.DataFrame(rows)
