"""
===============================================================================
SYNTHETIC SCENARIOS
===============================================================================
Data-generating processes for benchmarking external-control borrowing.

    linear     Y_trial = beta'X + A * alpha'(1, X) + e          X ~ N(mu1, sigma1)
               Y_pool  = (beta*dbeta)'X + delta*T + e'       X ~ N(mu2, sigma2)
    nonlinear  Y_trial = a * exp{beta'X + A * alpha'(1, X)} + e  X truncated to [-2, 2]
               Y_pool  = a * exp{(beta*dbeta)'X} + delta*T + e'  X truncated to [-4, 4]
    oneD       Y_trial = 2X + A + e, Y_pool = -1 + 2.5X + e', five outliers appended

T is a concurrency period drawn uniformly from {0, 1, 2}; it shifts pool
outcomes and is never a covariate.

Coefficients are drawn once from ``coef_seed`` and frozen into the
ScenarioConfig; datasets are drawn from ``seed``. Replication r of a
benchmark uses seed = base_seed + r with the same coefficients.
===============================================================================
"""

import hashlib
import logging
from dataclasses import dataclass, fields, replace
from typing import Dict, Optional, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy import stats

from .core_data import ExternalPool, TrialDataset
from .errors import ConfigError, OracleError

LOGGER = logging.getLogger(__name__)

# =============================================================================
# CONSTANTS
# =============================================================================

MECHANISMS = ("linear", "nonlinear", "oneD")

DBETA_LOW, DBETA_HIGH = 0.8, 1.2
ALPHA_SCALE = {"linear": 1.0, "nonlinear": 0.5, "oneD": 0.5}
N_PERIODS = 3

ONE_D_EFFECT = 1.0
ONE_D_OUTLIER_SHIFT = 6.0

REJECTION_ROUNDS = 10_000
ORACLE_DRAWS = 1_000_000
ORACLE_MAX_DRAWS = 32_000_000
ORACLE_CHUNK = 250_000
ORACLE_STREAM = 7_919

_DEFAULTS: Dict[str, Dict[str, object]] = {
    "linear": dict(d=8, n_treated=300, n_control=100, n_pool=800, mu1=0.0, sigma1=1.0,
                   mu2=0.1, sigma2=2.0, delta=0.1, noise_trial=1.0, noise_pool=1.5),
    "nonlinear": dict(d=8, n_treated=300, n_control=100, n_pool=800, mu1=0.0, sigma1=1.0,
                      mu2=0.1, sigma2=2.0, delta=1.0, noise_trial=1.0, noise_pool=2.0,
                      trial_bound=2.0, pool_bound=4.0),
    "oneD": dict(d=1, n_treated=100, n_control=100, n_pool=800, mu1=1.0, sigma1=1.0,
                 mu2=1.0, sigma2=1.0, delta=0.0, noise_trial=0.2, noise_pool=0.5,
                 n_outliers=5),
}


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """
    One simulation scenario with its frozen coefficient draws.

    Build with make_scenario(); replace(cfg, seed=...) keeps the coefficients.
    """

    mechanism: str
    d: int
    n_treated: int
    n_control: int
    n_pool: int
    mu1: float
    sigma1: float
    mu2: float
    sigma2: float
    delta: float
    seed: int
    coef_seed: int
    beta: NDArray
    delta_beta: NDArray
    alpha: NDArray
    amplitude: float = 1.0
    noise_trial: float = 1.0
    noise_pool: float = 1.5
    trial_bound: float = np.inf
    pool_bound: float = np.inf
    intercept_shift: float = 0.0
    n_outliers: int = 0
    alpha_scale: float = 0.5

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise ConfigError(f"Unknown mechanism {self.mechanism!r}", "mechanism")
        if min(self.d, self.n_treated, self.n_control, self.n_pool) <= 0:
            raise ConfigError("Dimensions and sample counts must be positive", self.mechanism)
        if self.sigma1 <= 0 or self.sigma2 <= 0:
            raise ConfigError("sigma1 and sigma2 must be positive", self.mechanism)
        for name, size in (("beta", self.d), ("delta_beta", self.d), ("alpha", self.d + 1)):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != (size,) or not np.all(np.isfinite(arr)):
                raise ConfigError(f"{name} must be {size} finite values", name)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_trial(self) -> int:
        return self.n_treated + self.n_control

    def digest(self, include_seed: bool = True) -> str:
        """Short stable hash of every field, coefficients included."""
        h = hashlib.sha256()
        for f in fields(self):
            if f.name == "seed" and not include_seed:
                continue
            value = getattr(self, f.name)
            h.update(f.name.encode())
            h.update(value.tobytes() if isinstance(value, np.ndarray) else repr(value).encode())
        return h.hexdigest()[:16]

    def describe(self) -> Dict[str, object]:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = value.tolist() if isinstance(value, np.ndarray) else value
        out["digest"] = self.digest()
        return out


def make_scenario(mechanism: str, seed: int = 0, exchangeable: bool = False,
                  **overrides) -> ScenarioConfig:
    """
    Build a scenario with default settings for its mechanism.

    Args:
        mechanism: 'linear', 'nonlinear' or 'oneD'
        seed: Seed for the coefficient draws and the first dataset
        exchangeable: Pool drawn from the trial-control law (delta = 0,
            dbeta = 1, matching covariate law)
        **overrides: Any ScenarioConfig field (coefficients included)

    Returns:
        ScenarioConfig
    """
    if mechanism not in MECHANISMS:
        raise ConfigError(f"Unknown mechanism {mechanism!r}; choose from {MECHANISMS}", "mechanism")
    params: Dict[str, object] = dict(_DEFAULTS[mechanism])
    params.update(mechanism=mechanism, seed=seed, coef_seed=overrides.pop("coef_seed", seed))
    params.update({k: v for k, v in overrides.items() if k not in ("beta", "delta_beta", "alpha")})

    d = int(params["d"])
    scale = float(params.get("alpha_scale", ALPHA_SCALE[mechanism]))
    params["alpha_scale"] = scale
    rng = np.random.default_rng(int(params["coef_seed"]))
    beta = rng.uniform(-1.0, 1.0, d)
    delta_beta = rng.uniform(DBETA_LOW, DBETA_HIGH, d)
    alpha = rng.uniform(-scale, scale, d + 1)
    if mechanism == "oneD":
        beta, delta_beta = np.array([2.0]), np.array([1.25])
        alpha = np.array([ONE_D_EFFECT, 0.0])

    params["beta"] = overrides.get("beta", beta)
    params["delta_beta"] = overrides.get("delta_beta", delta_beta)
    params["alpha"] = overrides.get("alpha", alpha)

    if exchangeable:
        params.update(delta=0.0, delta_beta=np.ones(d), mu2=params["mu1"], sigma2=params["sigma1"])
        if mechanism == "nonlinear":
            params["pool_bound"] = params["trial_bound"]
    return ScenarioConfig(**params)


def replicate(cfg: ScenarioConfig, r: int, base_seed: int) -> ScenarioConfig:
    return replace(cfg, seed=base_seed + r)


# =============================================================================
# SAMPLERS
# =============================================================================

def truncated_normal(rng: np.random.Generator, mean: float, sd: float, bound: float,
                     size: Tuple[int, ...]) -> NDArray:
    """
    N(mean, sd) restricted to [-bound, bound] by rejection; entries still
    outside after REJECTION_ROUNDS redraws come from the inverse CDF.
    """
    out = rng.normal(mean, sd, size)
    if not np.isfinite(bound):
        return out
    bad = np.abs(out) > bound
    rounds = 0
    while bad.any() and rounds < REJECTION_ROUNDS:
        out[bad] = rng.normal(mean, sd, int(bad.sum()))
        bad = np.abs(out) > bound
        rounds += 1
    if bad.any():
        a, b = (-bound - mean) / sd, (bound - mean) / sd
        out[bad] = stats.truncnorm.rvs(a, b, loc=mean, scale=sd, size=int(bad.sum()), random_state=rng)
    return out


def _assign_treatment(rng: np.random.Generator, n_trial: int, n_treated: int) -> NDArray:
    a = np.zeros(n_trial, dtype=int)
    a[rng.permutation(n_trial)[:n_treated]] = 1
    return a


# =============================================================================
# GENERATORS
# =============================================================================

def gen_linear(cfg: ScenarioConfig) -> Tuple[TrialDataset, ExternalPool]:
    if cfg.mechanism != "linear":
        raise ConfigError(f"gen_linear called with mechanism {cfg.mechanism!r}", "mechanism")
    rng = np.random.default_rng(cfg.seed)
    X = rng.normal(cfg.mu1, cfg.sigma1, (cfg.n_trial, cfg.d))
    a = _assign_treatment(rng, cfg.n_trial, cfg.n_treated)
    effect = cfg.alpha[0] + X @ cfg.alpha[1:]
    y = X @ cfg.beta + a * effect + rng.normal(0.0, cfg.noise_trial, cfg.n_trial)

    Xp = rng.normal(cfg.mu2, cfg.sigma2, (cfg.n_pool, cfg.d))
    period = rng.integers(0, N_PERIODS, cfg.n_pool)
    yp = (Xp @ (cfg.beta * cfg.delta_beta) + cfg.delta * period + cfg.intercept_shift
          + rng.normal(0.0, cfg.noise_pool, cfg.n_pool))
    return TrialDataset(X, a, y), ExternalPool(Xp, yp, period=period)


def gen_nonlinear(cfg: ScenarioConfig) -> Tuple[TrialDataset, ExternalPool]:
    if cfg.mechanism != "nonlinear":
        raise ConfigError(f"gen_nonlinear called with mechanism {cfg.mechanism!r}", "mechanism")
    rng = np.random.default_rng(cfg.seed)
    X = truncated_normal(rng, cfg.mu1, cfg.sigma1, cfg.trial_bound, (cfg.n_trial, cfg.d))
    a = _assign_treatment(rng, cfg.n_trial, cfg.n_treated)
    index = X @ cfg.beta + a * (cfg.alpha[0] + X @ cfg.alpha[1:])
    y = cfg.amplitude * np.exp(index) + rng.normal(0.0, cfg.noise_trial, cfg.n_trial)

    Xp = truncated_normal(rng, cfg.mu2, cfg.sigma2, cfg.pool_bound, (cfg.n_pool, cfg.d))
    period = rng.integers(0, N_PERIODS, cfg.n_pool)
    yp = (cfg.amplitude * np.exp(Xp @ (cfg.beta * cfg.delta_beta)) + cfg.delta * period
          + cfg.intercept_shift + rng.normal(0.0, cfg.noise_pool, cfg.n_pool))
    return TrialDataset(X, a, y), ExternalPool(Xp, yp, period=period)


def gen_oneD(seed: int = 0, n_control: int = 100, n_treated: int = 100, n_pool: int = 800,
             n_outliers: int = 5, noise_trial: float = 0.2,
             noise_pool: float = 0.5) -> Tuple[TrialDataset, ExternalPool]:
    """
    One-covariate example with a shifted pool and appended outliers.

    Trial: X ~ U(0, 2), Y = 2X + A + e (sd 0.2), so tau = 1.
    Pool:  X ~ U(0, 2), Y = -1 + 2.5X + e (sd 0.5).
    Outliers (the last n_outliers pool rows): pool line + e + 6*sign(e).
    """
    rng = np.random.default_rng(seed)
    n_trial = n_control + n_treated
    X = rng.uniform(0.0, 2.0, n_trial)
    a = _assign_treatment(rng, n_trial, n_treated)
    y = 2.0 * X + ONE_D_EFFECT * a + rng.normal(0.0, noise_trial, n_trial)

    Xp = rng.uniform(0.0, 2.0, n_pool)
    yp = -1.0 + 2.5 * Xp + rng.normal(0.0, noise_pool, n_pool)

    Xo = rng.uniform(0.0, 2.0, n_outliers)
    eo = rng.normal(0.0, noise_pool, n_outliers)
    yo = -1.0 + 2.5 * Xo + eo + ONE_D_OUTLIER_SHIFT * np.where(eo < 0, -1.0, 1.0)

    trial = TrialDataset(X.reshape(-1, 1), a, y)
    pool = ExternalPool(np.concatenate([Xp, Xo]).reshape(-1, 1), np.concatenate([yp, yo]))
    return trial, pool


def outlier_indices(pool: ExternalPool, n_outliers: int = 5) -> NDArray:
    """Pool indices of the outliers appended by gen_oneD."""
    return np.arange(len(pool) - n_outliers, len(pool))


def generate(cfg: ScenarioConfig) -> Tuple[TrialDataset, ExternalPool]:
    if cfg.mechanism == "linear":
        return gen_linear(cfg)
    if cfg.mechanism == "nonlinear":
        return gen_nonlinear(cfg)
    return gen_oneD(cfg.seed, cfg.n_control, cfg.n_treated, cfg.n_pool, cfg.n_outliers,
                    cfg.noise_trial, cfg.noise_pool)


# =============================================================================
# TRUE EFFECT
# =============================================================================

_ORACLE_CACHE: Dict[Tuple[str, int, int], Tuple[float, float]] = {}


def _effect_draws(cfg: ScenarioConfig, rng: np.random.Generator, n: int) -> NDArray:
    X = truncated_normal(rng, cfg.mu1, cfg.sigma1, cfg.trial_bound, (n, cfg.d))
    base = X @ cfg.beta
    treated = base + cfg.alpha[0] + X @ cfg.alpha[1:]
    return cfg.amplitude * (np.exp(treated) - np.exp(base))


def true_tau_oracle(cfg: ScenarioConfig, n_draws: int = ORACLE_DRAWS,
                    seed: Optional[int] = None) -> Tuple[float, float]:
    """
    Monte Carlo estimate of the nonlinear effect and its standard error.

    Returns:
        (tau, se) from n_draws draws of the trial covariate law
    """
    rng = np.random.default_rng([cfg.coef_seed, ORACLE_STREAM] if seed is None else seed)
    count, mean, m2 = 0, 0.0, 0.0
    remaining = n_draws
    while remaining > 0:
        n = min(ORACLE_CHUNK, remaining)
        draws = _effect_draws(cfg, rng, n)
        chunk_mean = draws.mean()
        chunk_m2 = float(np.sum((draws - chunk_mean) ** 2))
        total = count + n
        shift = chunk_mean - mean
        mean += shift * n / total
        m2 += chunk_m2 + shift ** 2 * count * n / total
        count = total
        remaining -= n
    se = float(np.sqrt(m2 / (count - 1) / count))
    return float(mean), se


def true_tau_analytic(cfg: ScenarioConfig) -> float:
    """
    Closed-form effect. For the nonlinear mechanism the covariates are
    independent truncated normals, so E[exp(t'X)] factorizes into
    per-coordinate moment generating functions.
    """
    if cfg.mechanism == "linear":
        return float(cfg.alpha[0] + cfg.mu1 * np.sum(cfg.alpha[1:]))
    if cfg.mechanism == "oneD":
        return ONE_D_EFFECT

    mu, sd, bound = cfg.mu1, cfg.sigma1, cfg.trial_bound
    lo, hi = (-bound - mu) / sd, (bound - mu) / sd
    log_mass = np.log(stats.norm.cdf(hi) - stats.norm.cdf(lo))

    def log_mgf(t: NDArray) -> float:
        inner = stats.norm.cdf(hi - sd * t) - stats.norm.cdf(lo - sd * t)
        return float(np.sum(mu * t + 0.5 * sd ** 2 * t ** 2 + np.log(inner) - log_mass))

    treated = np.exp(cfg.alpha[0] + log_mgf(cfg.beta + cfg.alpha[1:]))
    control = np.exp(log_mgf(cfg.beta))
    return float(cfg.amplitude * (treated - control))


def true_tau(cfg: ScenarioConfig, n_draws: int = ORACLE_DRAWS) -> float:
    """
    True average treatment effect in the trial population.

    Linear and oneD are analytic. Nonlinear uses the Monte Carlo oracle,
    doubling the draws until se < 1e-3 * (|tau| + 1).
    """
    if cfg.mechanism != "nonlinear":
        return true_tau_analytic(cfg)
    if cfg.amplitude == 0:
        return 0.0

    key = (cfg.digest(include_seed=False), n_draws, cfg.coef_seed)
    if key in _ORACLE_CACHE:
        return _ORACLE_CACHE[key][0]
    draws = n_draws
    while True:
        tau, se = true_tau_oracle(cfg, draws)
        if se < 1e-3 * (abs(tau) + 1):
            break
        if draws * 2 > ORACLE_MAX_DRAWS:
            raise OracleError(
                f"Oracle standard error {se:.3g} too large for tau={tau:.4g} after {draws} draws",
                cfg.digest(),
            )
        LOGGER.info("Oracle SE %.3g too large with %d draws; doubling", se, draws)
        draws *= 2
    _ORACLE_CACHE[key] = (tau, se)
    LOGGER.debug("Nonlinear tau = %.6f (SE %.2g, %d draws)", tau, se, draws)
    return tau
