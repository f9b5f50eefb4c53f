"""
===============================================================================
MONTE CARLO BENCHMARK
===============================================================================
Replicate a scenario (or resample a real trial's control arm), run every
method on each replication and summarize against the true effect:

    mc_bias  |mean(tau_hat) - tau|   (or mean |tau_hat - tau| with bias_mode='mean-abs')
    mc_std   sample SD across replications (divisor reps - 1)
    mc_mse   mean (tau_hat - tau)^2

Methods:
    aipw    trial only
    full    whole pool borrowed
    if      influence ranking; Top-k for each k, plus k* chosen by estimated MSE
    lasso   |b_hat| ranking; Top-k for each k, plus the MSE-tuned lasso penalty

Within a replication every method shares the same data and the same
trial-only nuisance fits. Replication r draws its data from seed
base_seed + r, so tables do not depend on the number of workers.
===============================================================================
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from .config import BorrowConfig
from .core_data import ExternalPool, TrialDataset, subsample_controls
from .errors import BenchmarkError, BorrowLabError, ConfigError, DataValidationError
from .estimators import tau_aipw, tau_full
from .nuisance import fit_nuisances
from .selection import (
    bias_ranking,
    estimate_at_k,
    estimate_full_pipeline,
    influence_ranking,
    lasso_select,
)
from .simgen import ScenarioConfig, generate, replicate, true_tau

LOGGER = logging.getLogger(__name__)

# =============================================================================
# CONFIGURATION
# =============================================================================

METHODS = ("aipw", "full", "lasso", "if")
BIAS_MODES = ("abs-mean", "mean-abs")
MAX_FAILURE_RATE = 0.05
SUBSAMPLE_STREAM = 104_729

METRIC_COLUMNS = ["method", "k_rule", "k", "mc_bias", "mc_std", "mc_mse", "mc_se_of_bias",
                  "mean_se_hat", "mean_k_star", "n_reps", "n_failed", "status"]


@dataclass(frozen=True)
class RealData:
    """A fixed trial and pool replicated by control-arm subsampling."""

    trial: TrialDataset
    pool: ExternalPool
    name: str = "real"

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.trial.X, self.trial.a, self.trial.y, self.pool.X, self.pool.y):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


Source = Union[ScenarioConfig, RealData]


@dataclass(frozen=True)
class MetricsTable:
    """Aggregated metrics per (method, k) plus the raw replication records."""

    table: pd.DataFrame
    scenario: str
    tau_true: float
    replications: pd.DataFrame
    tags: Dict[str, object] = field(default_factory=dict)

    def row(self, method: str, k: Optional[int] = None) -> pd.Series:
        """Fixed-k row for an integer k; the MSE-selected row when k is None."""
        t = self.table
        if k is None:
            match = t[(t["method"] == method) & (t["k_rule"] == "mse")]
        else:
            same_k = (t["k"] == k).fillna(False).astype(bool)
            match = t[(t["method"] == method) & (t["k_rule"] == "fixed") & same_k]
        if match.empty:
            raise KeyError((method, k))
        return match.iloc[0]

    def curves(self) -> pd.DataFrame:
        """Per-k MSE curves for plotting."""
        fixed = self.table[self.table["k_rule"] == "fixed"]
        return fixed[["method", "k", "mc_mse", "mc_bias", "mc_std"]].reset_index(drop=True)

    def to_csv(self, path: str) -> None:
        out = self.table.copy()
        for key, value in self.tags.items():
            out[key] = value
        out["tau_true"] = self.tau_true
        out["scenario"] = self.scenario
        out.to_csv(path, index=False, float_format="%.17g")

    def to_dict(self) -> Dict[str, object]:
        records = self.table.astype(object).where(self.table.notna(), None).to_dict(orient="records")
        return {"scenario": self.scenario, "tau_true": self.tau_true, "tags": self.tags,
                "rows": records}

    def to_json(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, default=_json_default)


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"Not JSON serializable: {type(value).__name__}")


# =============================================================================
# ONE REPLICATION
# =============================================================================

def _record(r: int, method: str, k_rule: str, k: Optional[int], tau: float = np.nan,
            se: float = np.nan, k_star: Optional[int] = None, error: str = "") -> Dict[str, object]:
    return {"rep": r, "method": method, "k_rule": k_rule, "k": k, "tau_hat": tau,
            "se_hat": se, "k_star": k_star, "error": error}


def _replication_data(source: Source, r: int, base_seed: int,
                      control_n: Optional[int]) -> Tuple[TrialDataset, ExternalPool]:
    if isinstance(source, RealData):
        trial, pool = source.trial, source.pool
    else:
        trial, pool = generate(replicate(source, r, base_seed))
    if control_n is not None:
        rng = np.random.default_rng([base_seed, r, SUBSAMPLE_STREAM])
        trial = subsample_controls(trial, control_n, rng)
    return trial, pool


def _planned(methods: Sequence[str], k_list: Sequence[int], select: bool) -> List[Tuple[str, str, Optional[int]]]:
    plan = []
    for method in methods:
        for k in k_list:
            plan.append((method, "fixed", int(k)))
        if select and method in ("if", "lasso"):
            plan.append((method, "mse", None))
    return plan


def run_replication(source: Source, r: int, base_seed: int, methods: Sequence[str],
                    k_list: Sequence[int], bcfg: BorrowConfig, control_n: Optional[int] = None,
                    select: bool = True) -> List[Dict[str, object]]:
    """All method estimates for replication r; failures become error records."""
    plan = _planned(methods, k_list, select)
    try:
        trial, pool = _replication_data(source, r, base_seed, control_n)
        ns0 = fit_nuisances(trial, pool, [], bcfg)
    except BorrowLabError as exc:
        LOGGER.warning("Replication %d failed before estimation: %s", r, exc)
        return [_record(r, m, rule, k, error=str(exc)) for m, rule, k in plan]

    records: List[Dict[str, object]] = []
    for method in methods:
        rows = [(rule, k) for m, rule, k in plan if m == method]
        try:
            records.extend(_method_records(method, rows, r, trial, pool, ns0, bcfg))
        except BorrowLabError as exc:
            LOGGER.warning("Replication %d, method %s failed: %s", r, method, exc)
            records.extend(_record(r, method, rule, k, error=str(exc)) for rule, k in rows)
    return records


def _method_records(method, rows, r, trial, pool, ns0, bcfg) -> List[Dict[str, object]]:
    if method == "aipw":
        rep = tau_aipw(trial, ns0)
        return [_record(r, method, rule, k, rep.tau_hat, rep.se_hat, 0) for rule, k in rows]
    if method == "full":
        ns_full = fit_nuisances(trial, pool, range(len(pool)), bcfg, base=ns0)
        rep = tau_full(trial, pool, ns_full)
        return [_record(r, method, rule, k, rep.tau_hat, rep.se_hat, len(pool)) for rule, k in rows]

    ranking = influence_ranking(trial, pool, bcfg, ns0) if method == "if" else bias_ranking(trial, pool, ns0)
    out = []
    for rule, k in rows:
        try:
            if rule == "fixed":
                rep = estimate_at_k(trial, pool, ranking.order, min(k, len(pool)), bcfg, ns0, method)
                out.append(_record(r, method, rule, k, rep.tau_hat, rep.se_hat, rep.k_borrowed))
            elif method == "if":
                res = estimate_full_pipeline(trial, pool, bcfg, "influence", ns0, ranking)
                out.append(_record(r, method, rule, k, res.report.tau_hat, res.report.se_hat,
                                   res.k_star))
            else:
                sel = lasso_select(trial, pool, ns0, bcfg)
                out.append(_record(r, method, rule, k, sel.report.tau_hat, sel.report.se_hat,
                                   int(sel.borrowed.size)))
        except BorrowLabError as exc:
            out.append(_record(r, method, rule, k, error=str(exc)))
    return out


# =============================================================================
# AGGREGATION
# =============================================================================

def summarize(records: pd.DataFrame, tau_true: float, reps: int,
              bias_mode: str = "abs-mean") -> pd.DataFrame:
    """Collapse replication records to one metrics row per (method, k_rule, k)."""
    rows = []
    keys = records[["method", "k_rule", "k"]].drop_duplicates()
    for _, key in keys.iterrows():
        mask = (records["method"] == key["method"]) & (records["k_rule"] == key["k_rule"])
        mask &= records["k"].isna() if pd.isna(key["k"]) else records["k"] == key["k"]
        group = records[mask]
        ok = group[np.isfinite(group["tau_hat"].astype(float))]
        n_ok, n_failed = len(ok), len(group) - len(ok)
        row = {"method": key["method"], "k_rule": key["k_rule"], "k": key["k"],
               "n_reps": n_ok, "n_failed": n_failed}
        if n_failed > MAX_FAILURE_RATE * reps or n_ok < 2:
            LOGGER.warning("Row %s/%s/%s aborted: %d of %d replications failed",
                           key["method"], key["k_rule"], key["k"], n_failed, reps)
            row.update(mc_bias=np.nan, mc_std=np.nan, mc_mse=np.nan, mc_se_of_bias=np.nan,
                       mean_se_hat=np.nan, mean_k_star=np.nan, status="aborted")
        else:
            est = ok["tau_hat"].to_numpy(dtype=float)
            err = est - tau_true
            std = float(np.std(est, ddof=1))
            bias = float(abs(err.mean())) if bias_mode == "abs-mean" else float(np.mean(np.abs(err)))
            row.update(
                mc_bias=bias,
                mc_std=std,
                mc_mse=float(np.mean(err ** 2)),
                mc_se_of_bias=std / np.sqrt(n_ok),
                mean_se_hat=float(ok["se_hat"].astype(float).mean()),
                mean_k_star=float(pd.to_numeric(ok["k_star"]).mean()),
                status="ok",
            )
        rows.append(row)
    table = pd.DataFrame(rows, columns=METRIC_COLUMNS)
    table["k"] = pd.array([None if pd.isna(k) else int(k) for k in table["k"]], dtype="Int64")
    return table


# =============================================================================
# DRIVERS
# =============================================================================

def _run(source: Source, tau: float, methods: Sequence[str], k_list: Sequence[int], reps: int,
         base_seed: int, bcfg: BorrowConfig, control_n: Optional[int], select: bool,
         bias_mode: str, n_jobs: int, progress: bool, scenario: str,
         tags: Dict[str, object]) -> MetricsTable:
    if reps < 2:
        raise ConfigError(f"reps must be >= 2, got {reps}", "reps")
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ConfigError(f"Unknown methods {sorted(unknown)}; choose from {METHODS}", "methods")
    if bias_mode not in BIAS_MODES:
        raise ConfigError(f"bias_mode must be one of {BIAS_MODES}", "bias_mode")

    reps_iter = tqdm(range(reps), desc=scenario, disable=not progress)
    if n_jobs == 1:
        results = [run_replication(source, r, base_seed, methods, k_list, bcfg, control_n, select)
                   for r in reps_iter]
    else:
        results = Parallel(n_jobs=n_jobs)(
            delayed(run_replication)(source, r, base_seed, methods, k_list, bcfg, control_n, select)
            for r in reps_iter
        )
    records = pd.DataFrame([rec for rep_records in results for rec in rep_records])
    table = summarize(records, tau, reps, bias_mode)
    aborted = table[table["status"] == "aborted"]
    if len(aborted) == len(table):
        raise BenchmarkError(f"All {len(table)} metric rows aborted", scenario)
    LOGGER.info("Benchmark %s: %d replications, %d metric rows", scenario, reps, len(table))
    return MetricsTable(table, scenario, float(tau), records, dict(tags))


def run_monte_carlo(cfg: ScenarioConfig, methods: Sequence[str] = METHODS,
                    k_list: Sequence[int] = (10,), reps: int = 200, base_seed: int = 0,
                    borrow_cfg: Optional[BorrowConfig] = None, control_n: Optional[int] = None,
                    select: bool = True, bias_mode: str = "abs-mean", n_jobs: int = 1,
                    progress: bool = False) -> MetricsTable:
    """
    Monte Carlo metrics for a simulated scenario.

    Args:
        cfg: Scenario with frozen coefficients
        methods: Subset of ('aipw', 'full', 'lasso', 'if')
        k_list: Top-k sizes evaluated for the ranked methods
        reps: Number of replications (>= 2)
        base_seed: Replication r uses seed base_seed + r
        borrow_cfg: Method configuration (scenario default if None)
        control_n: Subsample the trial control arm to this size per replication
        select: Also report the MSE-selected rows for 'if' and 'lasso'
        bias_mode: 'abs-mean' or 'mean-abs'
        n_jobs: joblib workers

    Returns:
        MetricsTable
    """
    bcfg = borrow_cfg or BorrowConfig.for_mechanism(cfg.mechanism)
    tags: Dict[str, object] = {"mechanism": cfg.mechanism, "mu2": cfg.mu2}
    if control_n is not None:
        if control_n > cfg.n_control:
            raise DataValidationError(
                f"control_n={control_n} exceeds the {cfg.n_control} simulated controls", "control_n"
            )
        tags["control_n"] = control_n
    return _run(cfg, true_tau(cfg), methods, k_list, reps, base_seed, bcfg, control_n, select,
                bias_mode, n_jobs, progress, cfg.digest(include_seed=False), tags)


def run_real_data(trial: TrialDataset, pool: ExternalPool, control_n: int, reps: int = 100,
                  base_seed: int = 0, methods: Sequence[str] = METHODS,
                  k_list: Sequence[int] = (10,), borrow_cfg: Optional[BorrowConfig] = None,
                  select: bool = True, bias_mode: str = "abs-mean", n_jobs: int = 1,
                  progress: bool = False) -> MetricsTable:
    """
    Real-data benchmark: the full-trial AIPW estimate is the reference, and
    each replication keeps the treated arm and subsamples control_n controls.
    """
    bcfg = borrow_cfg or BorrowConfig()
    if control_n > trial.n_control:
        raise DataValidationError(
            f"control_n={control_n} exceeds the {trial.n_control} trial controls", "control_n"
        )
    reference = tau_aipw(trial, fit_nuisances(trial, pool, [], bcfg)).tau_hat
    source = RealData(trial, pool)
    tags = {"mechanism": "real", "control_n": control_n}
    return _run(source, reference, methods, k_list, reps, base_seed, bcfg, control_n, select,
                bias_mode, n_jobs, progress, source.digest(), tags)


def sweep_shift(cfg: ScenarioConfig, mu2_list: Sequence[float], **kwargs) -> List[MetricsTable]:
    """run_monte_carlo for each pool covariate mean, coefficients unchanged."""
    return [run_monte_carlo(replace(cfg, mu2=float(mu2)), **kwargs) for mu2 in mu2_list]


def sweep_control_n(source: Source, nc_list: Sequence[int], **kwargs) -> List[MetricsTable]:
    """Benchmark at each trial control-arm size (treated arm kept whole)."""
    available = source.n_control if isinstance(source, ScenarioConfig) else source.trial.n_control
    too_large = [nc for nc in nc_list if nc > available]
    if too_large:
        raise DataValidationError(
            f"Control sizes {too_large} exceed the {available} available controls", "control_n"
        )
    if isinstance(source, RealData):
        return [run_real_data(source.trial, source.pool, int(nc), **kwargs) for nc in nc_list]
    return [run_monte_carlo(source, control_n=int(nc), **kwargs) for nc in nc_list]
