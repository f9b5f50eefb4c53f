"""
===============================================================================
ESTIMATORS
===============================================================================
Trial-only AIPW, the fused estimator over trial + borrowed external controls
(with per-sample efficient-influence values), full borrowing, and the
adaptive-lasso bias baseline.

Conventions:
    - tau_hat is the mean of the uncentered per-sample terms, so the
      centered influence values average to zero up to rounding.
    - se_hat = sqrt(sample variance of influence values / n_used).
===============================================================================
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy import stats

from .core_data import ExternalPool, TrialDataset
from .errors import DataValidationError, FitError
from .nuisance import NuisanceSet, e_s

LOGGER = logging.getLogger(__name__)

SIGMA2_FLOOR = 1e-12


# =============================================================================
# REPORT
# =============================================================================

@dataclass(frozen=True)
class EstimateReport:
    tau_hat: float
    se_hat: float
    n_used: int
    eif_values: NDArray
    method: str
    k_borrowed: int
    diagnostics: Dict[str, object] = field(default_factory=dict)

    def wald_ci(self, level: float = 0.95) -> Tuple[float, float]:
        z = stats.norm.ppf(0.5 + level / 2)
        return self.tau_hat - z * self.se_hat, self.tau_hat + z * self.se_hat

    def relabel(self, method: str) -> "EstimateReport":
        return replace(self, method=method)

    def to_dict(self) -> Dict[str, object]:
        lo, hi = self.wald_ci()
        return {
            "method": self.method,
            "tau_hat": self.tau_hat,
            "se_hat": self.se_hat,
            "ci95_lower": lo,
            "ci95_upper": hi,
            "n_used": self.n_used,
            "k_borrowed": self.k_borrowed,
            "diagnostics": {k: _plain(v) for k, v in self.diagnostics.items()},
        }


def _plain(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, (tuple, list)):
        return [_plain(v) for v in value]
    return value


def _report(psi: NDArray, eif: NDArray, tau: float, method: str, k: int,
            diagnostics: Dict[str, object]) -> EstimateReport:
    n = psi.shape[0]
    se = float(np.sqrt(np.var(eif, ddof=1) / n)) if n > 1 else float("nan")
    eif.setflags(write=False)
    return EstimateReport(float(tau), se, n, eif, method, k, diagnostics)


# =============================================================================
# AIPW AND FUSED ESTIMATORS
# =============================================================================

def tau_aipw(trial: TrialDataset, ns: NuisanceSet) -> EstimateReport:
    """Augmented inverse probability weighting on the trial alone."""
    if trial.n_treated == 0 or trial.n_control == 0:
        raise DataValidationError("Both trial arms must be populated", "trial")
    X, A, Y = trial.X, trial.a, trial.y
    raw_e1 = ns.e1.predict_prob(X)
    e1 = np.clip(raw_e1, ns.eps_clip, 1.0 - ns.eps_clip)
    mu1 = ns.mu1.predict(X)
    mu0 = ns.mu0.predict(X)

    psi = A * (Y - mu1) / e1 - (1 - A) * (Y - mu0) / (1 - e1) + (mu1 - mu0)
    tau = psi.mean()
    n_clipped = int(np.sum(raw_e1 != e1))
    if n_clipped:
        LOGGER.warning("%d propensity values clipped to [%g, %g]", n_clipped,
                       ns.eps_clip, 1 - ns.eps_clip)
    return _report(psi, psi - tau, tau, "aipw", 0, {"n_clipped": n_clipped, "q_hat": 1.0})


def tau_fused(trial: TrialDataset, pool: ExternalPool, borrowed: Sequence[int],
              ns: NuisanceSet) -> EstimateReport:
    """
    Fused estimator over trial + pool[borrowed].

    ``ns`` must have been fitted for the same borrowed set (any order). With
    nothing borrowed this is exactly tau_aipw.
    """
    requested = sorted(int(j) for j in borrowed)
    if requested != list(ns.borrowed):
        raise DataValidationError(
            f"Nuisances were fitted for {len(ns.borrowed)} borrowed samples, "
            f"estimate requested for {len(requested)}", "borrowed"
        )
    if not requested:
        return tau_aipw(trial, ns).relabel("fused")

    sel = np.asarray(ns.borrowed, dtype=int)
    n_b = sel.size
    X = np.vstack([trial.X, pool.X[sel]])
    Y = np.concatenate([trial.y, pool.y[sel]])
    A = np.concatenate([trial.a, np.zeros(n_b, dtype=int)])
    R = np.concatenate([np.ones(trial.n), np.zeros(n_b)])
    if np.sum(1 - A) == 0:
        raise FitError("Combined control set is empty")

    q = ns.q_hat
    pi = ns.pi.predict_prob(X)
    es = e_s(ns, X)
    m1 = ns.m1.predict(X)
    m0 = ns.m0.predict(X)

    weight = pi / q
    augmentation = R * A * (Y - m1) / es - (1 - A) * (Y - m0) / (1 - es)
    psi = weight * augmentation + (R / q) * (m1 - m0)
    tau = psi.mean()
    eif = weight * augmentation + (R / q) * (m1 - m0 - tau)

    raw_es = ns.e1.predict_prob(X) * pi
    diagnostics = {
        "n_clipped": int(np.sum(raw_es != es)),
        "q_hat": q,
        "pi_converged": bool(ns.pi.converged),
    }
    if diagnostics["n_clipped"]:
        LOGGER.info("%d combined-population propensities clipped", diagnostics["n_clipped"])
    return _report(psi, eif, tau, "fused", n_b, diagnostics)


def tau_full(trial: TrialDataset, pool: ExternalPool, ns: NuisanceSet) -> EstimateReport:
    """Fused estimator borrowing the entire pool."""
    return tau_fused(trial, pool, range(len(pool)), ns).relabel("full")


def fused_bias_plugin(trial: TrialDataset, ns: NuisanceSet) -> float:
    """
    Plug-in of the fused estimator's bias, E_S[(R/q)(mu0(X) - m0(X))].

    Only trial samples have R = 1, so this is the trial mean of
    (mu0 - m0) / q scaled by the trial share.
    """
    n_total = trial.n + len(ns.borrowed)
    diff = ns.mu0.predict(trial.X) - ns.m0.predict(trial.X)
    return float(np.sum(diff / ns.q_hat) / n_total)


# =============================================================================
# ADAPTIVE LASSO BASELINE
# =============================================================================

@dataclass(frozen=True)
class BiasVector:
    """Per-pool-sample bias estimates with a diagonal variance proxy."""

    b_hat: NDArray
    sigma2_hat: NDArray
    b_tilde: Optional[NDArray] = None
    lambda_pen: Optional[float] = None
    nu: Optional[float] = None

    def __len__(self) -> int:
        return self.b_hat.shape[0]


def _quad_forms(model, phi: NDArray) -> NDArray:
    return np.einsum("ij,ji->i", phi, model.normal_solve(phi.T))


def estimate_bias_vector(trial: TrialDataset, pool: ExternalPool, ns: NuisanceSet) -> BiasVector:
    """
    b_hat[j] = mu0_ext(x_j) - mu0(x_j) with variance proxy

        sigma2_ext * phi_j' (Phi_ext'Phi_ext + lambda I)^{-1} phi_j
      + sigma2_ctl * phi_j' (Phi_ctl'Phi_ctl + lambda I)^{-1} phi_j
    """
    if ns.mu0_ext is None:
        raise FitError("Pool outcome model is missing (pool needs at least 2 samples)", "mu0_ext")
    phi = ns.mu0.fm.design(pool.X)
    b_hat = ns.mu0_ext.predict(pool.X) - ns.mu0.predict(pool.X)
    sigma2 = (ns.mu0_ext.resid_var * _quad_forms(ns.mu0_ext, phi)
              + ns.mu0.resid_var * _quad_forms(ns.mu0, phi))
    sigma2 = np.maximum(sigma2, SIGMA2_FLOOR)
    return BiasVector(b_hat, sigma2)


def adaptive_lasso_threshold(bv: BiasVector, lambda_pen: float, nu: float = 1.0) -> BiasVector:
    """
    Separable adaptive-lasso solution under a diagonal covariance:

        b_tilde_j = sign(b_j) * max(0, |b_j| - lambda * sigma2_j / (2 |b_j|^nu))

    b_j = 0 maps to 0; lambda = inf zeroes everything.
    """
    if lambda_pen < 0:
        raise ValueError(f"lambda_pen must be >= 0, got {lambda_pen}")
    if nu <= 0:
        raise ValueError(f"nu must be > 0, got {nu}")
    abs_b = np.abs(bv.b_hat)
    if lambda_pen == 0:
        b_tilde = bv.b_hat.copy()
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            threshold = lambda_pen * bv.sigma2_hat / (2.0 * abs_b ** nu)
            b_tilde = np.sign(bv.b_hat) * np.maximum(0.0, abs_b - threshold)
        b_tilde[(abs_b == 0) | ~np.isfinite(b_tilde)] = 0.0
    return replace(bv, b_tilde=b_tilde, lambda_pen=float(lambda_pen), nu=float(nu))


def zeroing_penalties(bv: BiasVector, nu: float = 1.0) -> NDArray:
    """Smallest lambda at which each b_tilde_j becomes exactly zero."""
    return 2.0 * np.abs(bv.b_hat) ** (1.0 + nu) / bv.sigma2_hat


def lasso_borrow_set(bv: BiasVector) -> NDArray:
    if bv.b_tilde is None:
        raise ValueError("BiasVector has not been thresholded")
    return np.flatnonzero(bv.b_tilde == 0)


def lasso_rank(bv: BiasVector) -> NDArray:
    """Pool indices by ascending |b_hat|, ties by index."""
    return np.argsort(np.abs(bv.b_hat), kind="stable")
