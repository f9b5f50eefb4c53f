"""
borrowlab: influence-based borrowing of external control samples for
average-treatment-effect estimation in randomized trials.
"""

from .config import BorrowConfig
from .core_data import ExternalPool, FeatureMap, Sample, TrialDataset, validate
from .errors import BorrowLabError
from .estimators import EstimateReport, tau_aipw, tau_full, tau_fused
from .influence import InfluenceRanking, influence_score, rank_pool
from .nuisance import NuisanceSet, fit_nuisances
from .selection import MseProfile, estimate_full_pipeline, lasso_select, mse_profile
from .simgen import ScenarioConfig, generate, make_scenario, true_tau
from .bench import MetricsTable, run_monte_carlo, run_real_data

__version__ = "0.1.0"

__all__ = [
    "BorrowConfig",
    "BorrowLabError",
    "EstimateReport",
    "ExternalPool",
    "FeatureMap",
    "InfluenceRanking",
    "MetricsTable",
    "MseProfile",
    "NuisanceSet",
    "Sample",
    "ScenarioConfig",
    "TrialDataset",
    "estimate_full_pipeline",
    "fit_nuisances",
    "generate",
    "influence_score",
    "lasso_select",
    "make_scenario",
    "mse_profile",
    "rank_pool",
    "run_monte_carlo",
    "run_real_data",
    "tau_aipw",
    "tau_full",
    "tau_fused",
    "true_tau",
]
