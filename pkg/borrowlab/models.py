"""
===============================================================================
PARAMETRIC MODELS
===============================================================================
Ridge regression and logistic regression over a FeatureMap, with the analytic
per-sample gradient and the loss Hessian needed for influence scores.

    RidgeModel      closed-form ridge, intercept unpenalized
    LogisticModel   IRLS with a small ridge, probabilities clipped
    HessianFactor   Cholesky factor of the mean-loss Hessian (+ damping)

Per-sample loss is the squared error L(z; theta) = (y - phi(x)'theta)^2; the
penalty enters fitting only.
===============================================================================
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy import linalg
from scipy.special import expit

from .core_data import FeatureMap, Sample
from .errors import FitError, NumericalError, RankDeficiencyError

LOGGER = logging.getLogger(__name__)

# =============================================================================
# CONSTANTS
# =============================================================================

EPS_CLIP = 1e-3
IRLS_TOL = 1e-8
IRLS_MAX_ITER = 100
MIN_LOGISTIC_RIDGE = 1e-6
MIN_EIGENVALUE = 1e-10


def _penalty_mask(d_out: int) -> NDArray:
    mask = np.ones(d_out)
    mask[0] = 0.0
    return mask


# =============================================================================
# RIDGE REGRESSION
# =============================================================================

@dataclass(frozen=True)
class RidgeModel:
    """
    Fitted ridge regression.

    ``normal_factor`` is the Cholesky factor of Phi'W Phi + lambda*I_noint,
    kept for variance proxies; ``resid_var`` is the residual variance
    plug-in RSS/(n - d_out) (RSS/n when n <= d_out).
    """

    theta: NDArray
    lambda_reg: float
    fm: FeatureMap
    n_fit: int = 0
    resid_var: float = float("nan")
    normal_factor: Optional[Tuple[NDArray, bool]] = None

    def predict(self, X) -> NDArray:
        return self.fm.design(X) @ self.theta

    def normal_solve(self, rhs: NDArray) -> NDArray:
        if self.normal_factor is None:
            raise FitError("Model carries no normal-equation factor (not produced by fit_ridge)")
        return linalg.cho_solve(self.normal_factor, rhs)


def fit_ridge(X, y, lambda_reg: float, fm: FeatureMap,
              weights: Optional[NDArray] = None) -> RidgeModel:
    """
    Solve (Phi'W Phi + lambda*I_noint) theta = Phi'W y in closed form.

    Args:
        X: Covariates (n, d_in)
        y: Outcomes (n,)
        lambda_reg: Ridge strength (>= 0)
        fm: Feature map
        weights: Optional nonnegative per-sample weights (default all 1)

    Returns:
        RidgeModel
    """
    y = np.asarray(y, dtype=float)
    phi = fm.design(X)
    n = phi.shape[0]
    if lambda_reg < 0:
        raise FitError(f"lambda_reg must be >= 0, got {lambda_reg}")
    if n < 2:
        raise FitError(f"Ridge fit needs at least 2 samples, got {n}")

    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if w.shape[0] != n or np.any(w < 0):
        raise FitError("weights must be nonnegative with one entry per sample")

    phi_w = phi * w[:, None]
    normal = phi.T @ phi_w + lambda_reg * np.diag(_penalty_mask(fm.d_out))
    rhs = phi_w.T @ y

    if lambda_reg == 0 and np.linalg.matrix_rank(phi_w.T @ phi) < fm.d_out:
        raise RankDeficiencyError(
            f"Design of rank < {fm.d_out} with lambda_reg = 0; use a positive ridge",
            f"{n} samples, d_out={fm.d_out}",
        )
    try:
        factor = linalg.cho_factor(normal, lower=True)
    except linalg.LinAlgError as exc:
        raise RankDeficiencyError(
            f"Normal equations are singular: {exc}", f"{n} samples, d_out={fm.d_out}"
        ) from exc
    theta = linalg.cho_solve(factor, rhs)
    if not np.all(np.isfinite(theta)):
        raise NumericalError("Ridge solution is not finite")

    resid = y - phi @ theta
    rss = float(np.sum(w * resid ** 2))
    dof = n - fm.d_out if n > fm.d_out else n
    return RidgeModel(theta, float(lambda_reg), fm, n, rss / dof, factor)


def loss(model: RidgeModel, X, y) -> NDArray:
    """Per-sample squared error."""
    return (np.asarray(y, dtype=float) - model.predict(X)) ** 2


def grad_matrix(model: RidgeModel, X, y) -> NDArray:
    """Stacked per-sample loss gradients, shape (n, d_out)."""
    phi = model.fm.design(X)
    resid = phi @ model.theta - np.asarray(y, dtype=float)
    return 2.0 * resid[:, None] * phi


def grad_loss(model: RidgeModel, z: Sample) -> NDArray:
    """Gradient of L(z; theta) at the fitted theta: 2*(pred - y)*phi(x)."""
    return grad_matrix(model, z.x.reshape(1, -1), np.array([z.y]))[0]


# =============================================================================
# HESSIAN
# =============================================================================

@dataclass(frozen=True)
class HessianFactor:
    """Cholesky factorization of H = (2/N_C) sum phi phi' + damping*I."""

    matrix: NDArray
    factor: Tuple[NDArray, bool]
    damping: float

    def solve(self, v: NDArray) -> NDArray:
        return linalg.cho_solve(self.factor, v)

    def matvec(self, v: NDArray) -> NDArray:
        return self.matrix @ v


def hessian(model: RidgeModel, controls_X, damping: float = 0.0) -> HessianFactor:
    """
    Mean-loss Hessian over the trial controls.

    When the smallest eigenvalue of the undamped matrix is below 1e-10 and
    the supplied damping does not lift it, damping is raised to
    1e-6 * trace(H) / d_out.
    """
    phi = model.fm.design(controls_X)
    n_c = phi.shape[0]
    if n_c < 1:
        raise FitError("Hessian needs at least one control sample")
    if damping < 0:
        raise NumericalError(f"damping must be >= 0, got {damping}")

    base = (2.0 / n_c) * (phi.T @ phi)
    d_out = base.shape[0]
    min_eig = float(np.linalg.eigvalsh(base)[0])
    if min_eig + damping < MIN_EIGENVALUE:
        auto = 1e-6 * float(np.trace(base)) / d_out
        LOGGER.warning(
            "Hessian near-singular (min eigenvalue %.3g); damping raised from %.3g to %.3g",
            min_eig, damping, max(auto, damping),
        )
        damping = max(auto, damping, MIN_EIGENVALUE)

    matrix = base + damping * np.eye(d_out)
    try:
        factor = linalg.cho_factor(matrix, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(
            f"Hessian factorization failed (condition estimate {np.linalg.cond(matrix):.3g})",
            f"damping={damping}",
        ) from exc
    return HessianFactor(matrix, factor, float(damping))


# =============================================================================
# LOGISTIC REGRESSION
# =============================================================================

@dataclass(frozen=True)
class LogisticModel:
    """Logistic regression fitted by IRLS."""

    beta: NDArray
    fm: FeatureMap
    converged: bool
    iterations: int
    eps_clip: float = EPS_CLIP

    def logit(self, X) -> NDArray:
        return self.fm.design(X) @ self.beta

    def predict_prob(self, X) -> NDArray:
        return np.clip(expit(self.logit(X)), self.eps_clip, 1.0 - self.eps_clip)


@dataclass(frozen=True)
class ConstantProbability:
    """A probability model that returns one value everywhere (unclipped)."""

    value: float
    converged: bool = True

    def predict_prob(self, X) -> NDArray:
        return np.full(np.atleast_2d(X).shape[0], float(self.value))


def fit_logistic(X, labels, fm: FeatureMap, ridge: float = MIN_LOGISTIC_RIDGE,
                 eps_clip: float = EPS_CLIP) -> LogisticModel:
    """
    Penalized logistic regression by iteratively reweighted least squares.

    Convergence is declared when the gradient of the mean penalized
    log-likelihood has norm <= 1e-8; otherwise the fit stops after 100
    iterations with converged=False.

    Args:
        X: Covariates (n, d_in)
        labels: Binary labels (n,)
        fm: Feature map
        ridge: l2 penalty on every coordinate (at least 1e-6)

    Returns:
        LogisticModel
    """
    t = np.asarray(labels, dtype=float)
    phi = fm.design(X)
    n, d_out = phi.shape
    if np.unique(t).size < 2:
        raise FitError(f"All {n} labels are identical; logistic fit is degenerate")
    if n < d_out + 1:
        LOGGER.warning("Logistic fit on %d samples with %d parameters", n, d_out)
    ridge = max(ridge, MIN_LOGISTIC_RIDGE)

    beta = np.zeros(d_out)
    converged = False
    iterations = 0
    while True:
        p = expit(phi @ beta)
        grad = phi.T @ (t - p) - ridge * beta
        if np.linalg.norm(grad) / n <= IRLS_TOL:
            converged = True
            break
        if iterations == IRLS_MAX_ITER:
            break
        weights = p * (1.0 - p)
        info = phi.T @ (phi * weights[:, None]) + ridge * np.eye(d_out)
        try:
            step = linalg.cho_solve(linalg.cho_factor(info, lower=True), grad)
        except linalg.LinAlgError as exc:
            raise NumericalError(f"IRLS information matrix not positive definite: {exc}",
                                 f"iteration {iterations}") from exc
        beta = beta + step
        iterations += 1
        if not np.all(np.isfinite(beta)):
            raise NumericalError("IRLS diverged to non-finite coefficients", f"iteration {iterations}")

    if not converged:
        LOGGER.warning("Logistic IRLS did not converge in %d iterations (separable data?)",
                       IRLS_MAX_ITER)
    return LogisticModel(beta, fm, converged, iterations, eps_clip)


def predict_prob(model, x) -> float:
    """Clipped probability for a single covariate vector."""
    return float(model.predict_prob(np.asarray(x, dtype=float).reshape(1, -1))[0])
