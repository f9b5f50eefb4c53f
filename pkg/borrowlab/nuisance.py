"""
Nuisance functions for the trial-only and fused estimators.

    e1       P(A=1 | X) in the trial (randomization constant or logistic)
    pi       P(R=1 | X) over trial + borrowed (constant 1 without borrowing)
    mu0/mu1  outcome regressions on the trial arms
    m0       control outcome regression on trial controls + borrowed samples
    m1       same model as mu1
    mu0_ext  control outcome regression on the whole external pool
    q_hat    N_trial / (N_trial + N_borrowed)
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import NDArray

from .config import BorrowConfig
from .core_data import ExternalPool, TrialDataset, check_indices
from .errors import ConfigError, DataValidationError
from .models import ConstantProbability, LogisticModel, RidgeModel, fit_logistic, fit_ridge

LOGGER = logging.getLogger(__name__)

ProbabilityModel = Union[LogisticModel, ConstantProbability]


@dataclass(frozen=True)
class NuisanceSet:
    e1: ProbabilityModel
    pi: ProbabilityModel
    mu0: RidgeModel
    mu1: RidgeModel
    m0: RidgeModel
    mu0_ext: Optional[RidgeModel]
    q_hat: float
    borrowed: Tuple[int, ...]
    eps_clip: float
    diagnostics: Dict[str, object] = field(default_factory=dict)

    @property
    def m1(self) -> RidgeModel:
        return self.mu1


def e_s(ns: NuisanceSet, X) -> NDArray:
    """Clipped e1(x) * pi(x) for each row of X."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.clip(ns.e1.predict_prob(X) * ns.pi.predict_prob(X), ns.eps_clip, 1.0 - ns.eps_clip)


def fit_nuisances(trial: TrialDataset, pool: ExternalPool, borrowed: Sequence[int],
                  cfg: BorrowConfig, base: Optional[NuisanceSet] = None) -> NuisanceSet:
    """
    Fit every nuisance model for the combined population trial + pool[borrowed].

    Args:
        trial: Trial data (both arms populated)
        pool: External pool
        borrowed: Pool indices merged into the combined population
        cfg: Method configuration
        base: A NuisanceSet fitted on the same trial and pool; its
            trial-only fits (e1, mu0, mu1, mu0_ext) are reused

    Returns:
        NuisanceSet
    """
    if cfg.cross_fit:
        raise ConfigError("Cross-fitting of nuisances is not supported", "cross_fit")
    if trial.n_treated == 0 or trial.n_control == 0:
        raise DataValidationError("Both trial arms must be populated", "trial")
    idx = tuple(sorted(check_indices(borrowed, len(pool))))
    fm = cfg.feature_map(trial.d)

    if base is not None:
        e1, mu0, mu1, mu0_ext = base.e1, base.mu0, base.mu1, base.mu0_ext
    else:
        ctrl, trt = trial.controls, trial.treated
        mu0 = fit_ridge(ctrl.X, ctrl.y, cfg.lambda_reg, fm)
        mu1 = fit_ridge(trt.X, trt.y, cfg.lambda_reg, fm)
        if cfg.randomized:
            e1 = ConstantProbability(trial.n_treated / trial.n)
        else:
            e1 = fit_logistic(trial.X, trial.a, fm, cfg.logistic_ridge, cfg.eps_clip)
        mu0_ext = fit_ridge(pool.X, pool.y, cfg.lambda_reg, fm) if len(pool) >= 2 else None

    if idx:
        sel = np.asarray(idx, dtype=int)
        ctrl = trial.controls
        m0 = fit_ridge(np.vstack([ctrl.X, pool.X[sel]]), np.concatenate([ctrl.y, pool.y[sel]]),
                       cfg.lambda_reg, fm)
        X_comb = np.vstack([trial.X, pool.X[sel]])
        r = np.concatenate([np.ones(trial.n), np.zeros(sel.size)])
        pi = fit_logistic(X_comb, r, fm, cfg.logistic_ridge, cfg.eps_clip)
    else:
        m0 = mu0
        pi = ConstantProbability(1.0)

    q_hat = trial.n / (trial.n + len(idx))
    diagnostics = {
        "e1_converged": bool(e1.converged),
        "pi_converged": bool(pi.converged),
        "n_borrowed": len(idx),
    }
    return NuisanceSet(e1, pi, mu0, mu1, m0, mu0_ext, q_hat, idx, cfg.eps_clip, diagnostics)
