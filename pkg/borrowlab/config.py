"""
===============================================================================
CONFIGURATION
===============================================================================
Method knobs shared by the nuisance fits, the influence ranking, the k-sweep
and the Monte Carlo harness, plus the flat ``key = value`` config file reader
used by the command line.
===============================================================================
"""

import logging
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Dict, Optional

from .core_data import FeatureMap
from .errors import ConfigError

LOGGER = logging.getLogger(__name__)

# =============================================================================
# DEFAULTS
# =============================================================================

DEFAULT_LAMBDA = 1e-4
LOGISTIC_RIDGE = 1e-6
EPS_CLIP = 1e-3


@dataclass(frozen=True)
class BorrowConfig:
    """Configuration for nuisance fitting, ranking and subset selection."""

    # Ridge strength for every outcome regression (intercept unpenalized)
    lambda_reg: float = DEFAULT_LAMBDA

    # Basis for all parametric models: 'linear' or 'polynomial'
    feature_kind: str = "linear"
    degree: int = 1

    # Logistic fits (e1, pi)
    logistic_ridge: float = LOGISTIC_RIDGE
    eps_clip: float = EPS_CLIP

    # Hessian damping; 0 lets hessian() pick one only when H is near-singular
    damping: float = 0.0

    # e1 is the randomization constant when True, a logistic fit otherwise
    randomized: bool = True

    # Sample splitting for nuisances is not implemented; must stay False
    cross_fit: bool = False

    # k-grid for the MSE sweep
    dense_grid: bool = False
    grid_points: int = 50

    # Adaptive lasso baseline tuning
    lasso_nu: float = 1.0
    lasso_grid_size: int = 20

    # joblib workers for rankings, k-sweeps and replications
    n_jobs: int = 1

    def __post_init__(self):
        if self.lambda_reg < 0:
            raise ConfigError(f"lambda_reg must be >= 0, got {self.lambda_reg}", "lambda_reg")
        if self.feature_kind not in ("linear", "polynomial"):
            raise ConfigError(f"Unknown feature kind: {self.feature_kind!r}", "feature_kind")
        if self.degree < 1:
            raise ConfigError(f"degree must be >= 1, got {self.degree}", "degree")
        if not 0 < self.eps_clip < 0.5:
            raise ConfigError(f"eps_clip must lie in (0, 0.5), got {self.eps_clip}", "eps_clip")
        if self.damping < 0:
            raise ConfigError(f"damping must be >= 0, got {self.damping}", "damping")
        if self.logistic_ridge < 1e-6:
            raise ConfigError("logistic_ridge must be at least 1e-6", "logistic_ridge")
        if self.grid_points < 1:
            raise ConfigError("grid_points must be positive", "grid_points")
        if self.lasso_nu <= 0:
            raise ConfigError("lasso_nu must be > 0", "lasso_nu")
        if self.lasso_grid_size < 2:
            raise ConfigError("lasso_grid_size must be >= 2", "lasso_grid_size")

    def feature_map(self, d_in: int) -> FeatureMap:
        if self.feature_kind == "linear":
            return FeatureMap.linear(d_in)
        return FeatureMap.polynomial(d_in, self.degree)

    @classmethod
    def for_mechanism(cls, mechanism: str, **overrides) -> "BorrowConfig":
        """Defaults per scenario: quadratic basis for the nonlinear mechanism."""
        if mechanism == "nonlinear":
            base = dict(feature_kind="polynomial", degree=2)
        else:
            base = dict(feature_kind="linear", degree=1)
        base.update(overrides)
        return cls(**base)

    def with_updates(self, **changes) -> "BorrowConfig":
        return replace(self, **changes)


# =============================================================================
# CONFIG FILE
# =============================================================================

def read_config_file(path: str) -> Dict[str, str]:
    """
    Read a flat ``key = value`` text file.

    Blank lines and lines starting with '#' are skipped. Keys are normalized
    to snake_case so ``control-n`` and ``control_n`` are the same key.

    Args:
        path: Path to the config file

    Returns:
        Dictionary of raw string values
    """
    file_path = Path(path)
    if not file_path.is_file():
        raise ConfigError(f"Config file not found: {path}", path)

    values: Dict[str, str] = {}
    for lineno, raw in enumerate(file_path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"Expected 'key = value', got {raw!r}", f"{path}:{lineno}")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if not key:
            raise ConfigError("Empty key", f"{path}:{lineno}")
        values[key] = value.strip()
    LOGGER.debug("Read %d config keys from %s", len(values), path)
    return values


def borrow_config_keys() -> set:
    return {f.name for f in fields(BorrowConfig)}


def coerce_value(raw: str, like: Optional[object]) -> object:
    """Convert a config-file string to the type of the default it overrides."""
    if isinstance(like, bool):
        lowered = raw.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"Expected a boolean, got {raw!r}")
    try:
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"Could not parse {raw!r}: {exc}") from exc
    return raw
