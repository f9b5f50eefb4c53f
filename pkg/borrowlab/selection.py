"""
===============================================================================
SUBSET SELECTION BY ESTIMATED MSE
===============================================================================
Sweep the nested Top-k borrowed sets of a ranking, estimate for each k

    bias_hat_k = tau_S_k - tau_aipw
    var_hat_k  = sample variance of the influence values / (N_trial + k)
    mse_hat_k  = bias_hat_k^2 + var_hat_k

and keep the k with the smallest mse_hat (k = 0, i.e. no borrowing, is always
a candidate). The adaptive-lasso baseline is tuned with the same criterion.
===============================================================================
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from numpy.typing import NDArray

from .config import BorrowConfig
from .core_data import ExternalPool, TrialDataset, validate
from .errors import BorrowLabError, DataValidationError, SelectionError
from .estimators import (
    EstimateReport,
    adaptive_lasso_threshold,
    estimate_bias_vector,
    lasso_borrow_set,
    lasso_rank,
    tau_aipw,
    tau_fused,
    zeroing_penalties,
)
from .influence import InfluenceRanking, nested_prefix, rank_pool
from .models import hessian
from .nuisance import NuisanceSet, fit_nuisances

LOGGER = logging.getLogger(__name__)

PROFILE_COLUMNS = ["k", "tau_hat", "bias_hat", "var_hat", "mse_hat", "se_hat", "failed", "error"]


# =============================================================================
# PROFILE
# =============================================================================

@dataclass(frozen=True)
class MseProfile:
    """Per-k rows of the sweep plus the ranking they were built from."""

    table: pd.DataFrame
    order: NDArray
    ranking_source: str = "influence"

    @property
    def k_grid(self) -> List[int]:
        return [int(k) for k in self.table["k"]]

    @property
    def k_star(self) -> int:
        if "failed" in self.table:
            failed = self.table["failed"].astype(bool)
        else:
            failed = pd.Series(False, index=self.table.index)
        ok = self.table[~failed & np.isfinite(self.table["mse_hat"])].sort_values("k", kind="stable")
        if ok.empty:
            raise SelectionError("Every row of the MSE profile failed", self.ranking_source)
        # argmin returns the first minimum, i.e. the smaller k on ties
        return int(ok["k"].to_numpy()[np.argmin(ok["mse_hat"].to_numpy())])

    def row(self, k: int) -> pd.Series:
        match = self.table[self.table["k"] == k]
        if match.empty:
            raise KeyError(k)
        return match.iloc[0]

    def to_csv(self, path: str) -> None:
        self.table.to_csv(path, index=False, float_format="%.17g")


def default_k_grid(n_pool: int, dense: bool = False, grid_points: int = 50) -> List[int]:
    """
    Candidate k values: every k when dense, otherwise multiples of
    ceil(n_pool / grid_points) plus 0, 1 and n_pool.
    """
    if n_pool <= 0:
        return [0]
    if dense:
        return list(range(n_pool + 1))
    step = math.ceil(n_pool / grid_points)
    grid = {0, 1, n_pool}
    grid.update(range(step, n_pool, step))
    return sorted(grid)


def _failed_row(k: int, exc: BorrowLabError) -> Dict[str, object]:
    LOGGER.warning("MSE profile row k=%d failed: %s", k, exc)
    return {"k": k, "tau_hat": np.nan, "bias_hat": np.nan, "var_hat": np.nan,
            "mse_hat": np.nan, "se_hat": np.nan, "failed": True, "error": str(exc)}


def _profile_row(trial: TrialDataset, pool: ExternalPool, order: NDArray, k: int,
                 cfg: BorrowConfig, base: NuisanceSet, tau_ref: float) -> Dict[str, object]:
    try:
        borrowed = nested_prefix(order, k)
        ns = fit_nuisances(trial, pool, borrowed, cfg, base=base)
        rep = tau_fused(trial, pool, borrowed, ns)
    except BorrowLabError as exc:
        return _failed_row(k, exc)
    bias = rep.tau_hat - tau_ref
    var = float(np.var(rep.eif_values, ddof=1) / (trial.n + k))
    return {"k": k, "tau_hat": rep.tau_hat, "bias_hat": bias, "var_hat": var,
            "mse_hat": bias ** 2 + var, "se_hat": rep.se_hat, "failed": False, "error": ""}


def mse_profile(trial: TrialDataset, pool: ExternalPool, ranking, k_grid: Sequence[int],
                cfg: BorrowConfig, ranking_source: str = "influence",
                base: Optional[NuisanceSet] = None) -> MseProfile:
    """
    Estimate bias, variance and MSE of the fused estimator along a ranking.

    Args:
        trial: Trial data
        pool: External pool
        ranking: InfluenceRanking or an index order over the whole pool
        k_grid: Candidate k values (0 is always added)
        cfg: Method configuration
        ranking_source: 'influence' or 'lasso-bias'
        base: Trial-only nuisances to reuse (fitted if omitted)

    Returns:
        MseProfile sorted by k
    """
    order = np.asarray(ranking.order if isinstance(ranking, InfluenceRanking) else ranking, dtype=int)
    if order.shape[0] != len(pool):
        raise DataValidationError(
            f"Ranking covers {order.shape[0]} samples, pool has {len(pool)}", "ranking"
        )
    grid = sorted({int(k) for k in k_grid} | {0})
    if grid[-1] > len(pool) or grid[0] < 0:
        raise DataValidationError(f"k grid must lie in [0, {len(pool)}]", "k_grid")

    ns0 = base if base is not None else fit_nuisances(trial, pool, [], cfg)
    aipw = tau_aipw(trial, ns0)
    var0 = float(np.var(aipw.eif_values, ddof=1) / trial.n)
    rows = [{"k": 0, "tau_hat": aipw.tau_hat, "bias_hat": 0.0, "var_hat": var0,
             "mse_hat": var0, "se_hat": aipw.se_hat, "failed": False, "error": ""}]

    ks = grid[1:]
    if cfg.n_jobs == 1 or len(ks) < 2:
        rows.extend(_profile_row(trial, pool, order, k, cfg, ns0, aipw.tau_hat) for k in ks)
    else:
        rows.extend(Parallel(n_jobs=cfg.n_jobs)(
            delayed(_profile_row)(trial, pool, order, k, cfg, ns0, aipw.tau_hat) for k in ks
        ))

    table = pd.DataFrame(rows, columns=PROFILE_COLUMNS)
    n_failed = int(table["failed"].sum())
    if n_failed:
        LOGGER.warning("%d of %d profile rows failed", n_failed, len(table))
    return MseProfile(table, order, ranking_source)


def select_optimal(profile: MseProfile) -> Tuple[int, NDArray]:
    """Smallest estimated MSE over successful rows; ties go to the smaller k."""
    k_star = profile.k_star
    return k_star, nested_prefix(profile.order, k_star)


# =============================================================================
# ESTIMATION AT A GIVEN k
# =============================================================================

def estimate_at_k(trial: TrialDataset, pool: ExternalPool, order: Sequence[int], k: int,
                  cfg: BorrowConfig, base: Optional[NuisanceSet] = None,
                  method: str = "if") -> EstimateReport:
    """Fused estimate borrowing the first k samples of an order."""
    borrowed = nested_prefix(order, k)
    ns = fit_nuisances(trial, pool, borrowed, cfg, base=base)
    return tau_fused(trial, pool, borrowed, ns).relabel(method)


def influence_ranking(trial: TrialDataset, pool: ExternalPool, cfg: BorrowConfig,
                      ns0: NuisanceSet) -> InfluenceRanking:
    """Rank the pool by influence on the trial-control outcome model."""
    ctrl = trial.controls
    H = hessian(ns0.mu0, ctrl.X, cfg.damping)
    return rank_pool(ns0.mu0, H, ctrl, pool, n_jobs=cfg.n_jobs)


def bias_ranking(trial: TrialDataset, pool: ExternalPool, ns0: NuisanceSet) -> InfluenceRanking:
    """Rank the pool by |b_hat| (adaptive-lasso comparator)."""
    bv = estimate_bias_vector(trial, pool, ns0)
    return InfluenceRanking(np.abs(bv.b_hat), lasso_rank(bv))


# =============================================================================
# FULL PIPELINE
# =============================================================================

@dataclass(frozen=True)
class PipelineResult:
    report: EstimateReport
    profile: MseProfile
    ranking: Optional[InfluenceRanking]

    @property
    def k_star(self) -> int:
        return self.report.k_borrowed

    @property
    def selected(self) -> NDArray:
        return nested_prefix(self.profile.order, self.report.k_borrowed)


def estimate_full_pipeline(trial: TrialDataset, pool: ExternalPool, cfg: BorrowConfig,
                           ranking_source: str = "influence",
                           base: Optional[NuisanceSet] = None,
                           ranking: Optional[InfluenceRanking] = None) -> PipelineResult:
    """
    Rank the pool, sweep the k grid and return the estimate at k*.

    Args:
        trial: Trial data
        pool: External pool (may be empty)
        cfg: Method configuration
        ranking_source: 'influence' (default) or 'lasso-bias'
        base: Trial-only nuisances to reuse
        ranking: A ranking already computed for this trial and pool

    Returns:
        PipelineResult with the selected report, the profile and the ranking
    """
    validate(trial, pool).raise_if_invalid()
    ns0 = base if base is not None else fit_nuisances(trial, pool, [], cfg)
    method = "if" if ranking_source == "influence" else "lasso-rank"

    if len(pool) == 0:
        report = tau_aipw(trial, ns0).relabel(method)
        profile = mse_profile(trial, pool, np.empty(0, dtype=int), [0], cfg, ranking_source, ns0)
        return PipelineResult(report, profile, None)

    if ranking_source not in ("influence", "lasso-bias"):
        raise DataValidationError(f"Unknown ranking source {ranking_source!r}", "ranking_source")
    if ranking is None:
        if ranking_source == "influence":
            ranking = influence_ranking(trial, pool, cfg, ns0)
        else:
            ranking = bias_ranking(trial, pool, ns0)

    grid = default_k_grid(len(pool), cfg.dense_grid, cfg.grid_points)
    profile = mse_profile(trial, pool, ranking, grid, cfg, ranking_source, ns0)
    k_star, _ = select_optimal(profile)
    LOGGER.info("Selected k* = %d of %d external controls (%s ranking)", k_star, len(pool),
                ranking_source)
    if k_star == 0:
        report = tau_aipw(trial, ns0).relabel(method)
    else:
        report = estimate_at_k(trial, pool, ranking.order, k_star, cfg, ns0, method)
    return PipelineResult(report, profile, ranking)


# =============================================================================
# ADAPTIVE LASSO TUNING
# =============================================================================

@dataclass(frozen=True)
class LassoSelection:
    report: EstimateReport
    lambda_star: float
    borrowed: NDArray
    table: pd.DataFrame


def lasso_select(trial: TrialDataset, pool: ExternalPool, ns0: NuisanceSet,
                 cfg: BorrowConfig) -> LassoSelection:
    """
    Tune the adaptive-lasso penalty by estimated MSE.

    The grid holds lambda = 0 (borrow nothing) and cfg.lasso_grid_size
    log-spaced values between the smallest and largest per-point zeroing
    penalties, so it runs from borrowing nothing to borrowing everything.
    """
    bv = estimate_bias_vector(trial, pool, ns0)
    nu = cfg.lasso_nu
    aipw = tau_aipw(trial, ns0)

    penalties = zeroing_penalties(bv, nu)
    positive = penalties[np.isfinite(penalties) & (penalties > 0)]
    if positive.size:
        grid = np.geomspace(positive.min(), positive.max() * (1 + 1e-8), cfg.lasso_grid_size)
    else:
        grid = np.empty(0)
    lambdas = np.concatenate([[0.0], grid])

    cache: Dict[Tuple[int, ...], Tuple[EstimateReport, float]] = {}
    rows = []
    for lam in lambdas:
        borrowed = lasso_borrow_set(adaptive_lasso_threshold(bv, lam, nu))
        key = tuple(int(j) for j in borrowed)
        if key not in cache:
            try:
                if key:
                    ns = fit_nuisances(trial, pool, key, cfg, base=ns0)
                    rep = tau_fused(trial, pool, key, ns).relabel("lasso")
                else:
                    rep = aipw.relabel("lasso")
                var = float(np.var(rep.eif_values, ddof=1) / rep.n_used)
                cache[key] = (rep, (rep.tau_hat - aipw.tau_hat) ** 2 + var)
            except BorrowLabError as exc:
                LOGGER.warning("Lasso candidate lambda=%.4g failed: %s", lam, exc)
                cache[key] = (None, np.nan)
        rep, mse = cache[key]
        rows.append({"lambda": lam, "n_borrowed": len(key),
                     "tau_hat": np.nan if rep is None else rep.tau_hat, "mse_hat": mse})

    table = pd.DataFrame(rows)
    ok = table[np.isfinite(table["mse_hat"])]
    if ok.empty:
        raise SelectionError("Every adaptive-lasso candidate failed", "lasso")
    best = ok.sort_values(["mse_hat", "n_borrowed"], kind="stable").iloc[0]
    lam_star = float(best["lambda"])
    borrowed = lasso_borrow_set(adaptive_lasso_threshold(bv, lam_star, nu))
    rep, _ = cache[tuple(int(j) for j in borrowed)]
    LOGGER.info("Adaptive lasso: lambda* = %.4g borrows %d of %d", lam_star, borrowed.size, len(pool))
    return LassoSelection(rep, lam_star, borrowed, table)
