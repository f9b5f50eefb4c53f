"""
===============================================================================
INFLUENCE SCORES FOR EXTERNAL CONTROLS
===============================================================================
How much would adding an external sample z move the trial-control outcome
model's loss on the trial controls?

    influence_params      -H^{-1} grad L(z)                   (parameter shift)
    influence_loss_pair   -grad L(z_i)' H^{-1} grad L(z)      (loss shift at z_i)
    influence_score       sum_i |influence_loss_pair(z, z_i)|
    exact_influence       the same quantity by refitting with z added

One Hessian factorization serves every pool point: the score of z costs one
triangular solve and a matrix-vector product with the stacked control
gradients.
===============================================================================
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from numpy.typing import NDArray

from .core_data import ExternalPool, FeatureMap, OutcomeBlock, Sample
from .errors import DataValidationError
from .models import HessianFactor, RidgeModel, fit_ridge, grad_loss, grad_matrix, loss

LOGGER = logging.getLogger(__name__)

TIE_RULE = "pool-index"
CHUNK_SIZE = 512


@dataclass(frozen=True)
class InfluenceRanking:
    """Scores per pool index and the ascending (stable) order."""

    scores: NDArray
    order: NDArray
    ties_broken_by: str = TIE_RULE

    def __len__(self) -> int:
        return self.order.shape[0]

    def to_records(self) -> List[dict]:
        return [{"index": int(j), "score": float(self.scores[j])} for j in self.order]


def _require_untreated(z: Sample) -> None:
    if z.a != 0:
        raise DataValidationError("Influence is defined for untreated samples only (a=0)")


# =============================================================================
# FIRST-ORDER INFLUENCE
# =============================================================================

def influence_params(model: RidgeModel, H: HessianFactor, z: Sample) -> NDArray:
    _require_untreated(z)
    return -H.solve(grad_loss(model, z))


def influence_loss_pair(model: RidgeModel, H: HessianFactor, z: Sample, zi: Sample) -> float:
    _require_untreated(z)
    return float(-grad_loss(model, zi) @ H.solve(grad_loss(model, z)))


def influence_score(model: RidgeModel, H: HessianFactor, controls: OutcomeBlock, z: Sample) -> float:
    """Total absolute first-order loss change over the trial controls."""
    _require_untreated(z)
    G = grad_matrix(model, controls.X, controls.y)
    v = H.solve(grad_loss(model, z))
    return float(np.sum(np.abs(G @ v)))


def score_pool(model: RidgeModel, H: HessianFactor, controls: OutcomeBlock,
               pool: ExternalPool, n_jobs: int = 1) -> NDArray:
    """
    Influence scores for every pool sample.

    Pool points are scored in chunks; with n_jobs != 1 the chunks run under
    joblib and are concatenated in pool order.
    """
    if len(pool) == 0:
        return np.empty(0)
    G = grad_matrix(model, controls.X, controls.y)

    def _chunk(lo: int, hi: int) -> NDArray:
        Gz = grad_matrix(model, pool.X[lo:hi], pool.y[lo:hi])
        V = H.solve(Gz.T)
        return np.abs(G @ V).sum(axis=0)

    bounds = [(lo, min(lo + CHUNK_SIZE, len(pool))) for lo in range(0, len(pool), CHUNK_SIZE)]
    if n_jobs == 1 or len(bounds) == 1:
        parts = [_chunk(lo, hi) for lo, hi in bounds]
    else:
        parts = Parallel(n_jobs=n_jobs, backend="threading")(
            delayed(_chunk)(lo, hi) for lo, hi in bounds
        )
    return np.concatenate(parts)


def rank_pool(model: RidgeModel, H: HessianFactor, controls: OutcomeBlock,
              pool: ExternalPool, n_jobs: int = 1) -> InfluenceRanking:
    """Ascending influence order; equal scores keep pool-index order."""
    scores = score_pool(model, H, controls, pool, n_jobs=n_jobs)
    if not np.all(np.isfinite(scores)):
        bad = int(np.flatnonzero(~np.isfinite(scores))[0])
        raise DataValidationError("Non-finite influence score", f"pool index {bad}")
    order = np.argsort(scores, kind="stable")
    LOGGER.debug("Ranked %d pool samples; score range [%.4g, %.4g]",
                 len(pool), scores.min(initial=0.0), scores.max(initial=0.0))
    scores.setflags(write=False)
    order.setflags(write=False)
    return InfluenceRanking(scores, order)


def nested_set(ranking: InfluenceRanking, k: int) -> NDArray:
    """First k pool indices of the ranking."""
    return nested_prefix(ranking.order, k)


def nested_prefix(order: Sequence[int], k: int) -> NDArray:
    order = np.asarray(order, dtype=int)
    if k < 0 or k > order.shape[0]:
        raise DataValidationError(f"k={k} outside [0, {order.shape[0]}]", f"k={k}")
    return order[:k].copy()


# =============================================================================
# EXACT RETRAINING ORACLES
# =============================================================================

def _with_point(controls: OutcomeBlock, z: Sample, weight: float) -> Tuple[NDArray, NDArray, NDArray]:
    X = np.vstack([controls.X, z.x.reshape(1, -1)])
    y = np.append(controls.y, z.y)
    w = np.append(np.ones(len(controls.y)), weight)
    return X, y, w


def upweighted_params(controls: OutcomeBlock, lambda_reg: float, fm: FeatureMap,
                      z: Sample, eps: float) -> NDArray:
    """
    Refit with z added at weight N_C * eps, i.e. eps against the mean loss.

    theta(eps) - theta(0) is eps * influence_params to first order.
    """
    X, y, w = _with_point(controls, z, len(controls.y) * eps)
    return fit_ridge(X, y, lambda_reg, fm, weights=w).theta


def exact_influence(controls: OutcomeBlock, lambda_reg: float, fm: FeatureMap,
                    z: Sample, weight: float = 1.0) -> float:
    """
    Total absolute change of the control losses when z joins the fit.

    Args:
        controls: Trial control arm
        lambda_reg: Ridge strength used for both fits
        fm: Feature map
        z: External sample to add
        weight: Weight on z in the refit (1 = add one sample)

    Returns:
        sum_i |L(z_i, theta_{+z}) - L(z_i, theta)|
    """
    base = fit_ridge(controls.X, controls.y, lambda_reg, fm)
    X, y, w = _with_point(controls, z, weight)
    plus = fit_ridge(X, y, lambda_reg, fm, weights=w)
    return float(np.sum(np.abs(loss(plus, controls.X, controls.y) - loss(base, controls.X, controls.y))))
