"""
===============================================================================
COMMAND LINE
===============================================================================
    python -m borrowlab simulate  --scenario oneD --out output/oneD
    python -m borrowlab estimate  --scenario linear --method aipw
    python -m borrowlab borrow    --rct nsw.csv --external psid.csv --out output/nsw
    python -m borrowlab benchmark --scenario linear --reps 200 --seed 7 --format csv

Commands:
    simulate   write trial.csv, external.csv, covariates.csv, scenario.json
    estimate   one EstimateReport (aipw, full, lasso or if; fixed k or auto)
    borrow     influence ranking, MSE profile and the selected index set
    benchmark  Monte Carlo (scenario) or control-subsampling (files) metrics

Settings resolve as flags > --config FILE > defaults. Any library error is
printed to stderr as a JSON record and mapped to a nonzero exit status.
===============================================================================
"""

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .bench import BIAS_MODES, METHODS, run_monte_carlo, run_real_data
from .config import BorrowConfig, borrow_config_keys, coerce_value, read_config_file
from .core_data import ExternalPool, TrialDataset, describe, subsample_controls
from .errors import (BenchmarkError, BorrowLabError, ConfigError, DataValidationError,
                     FitError, NumericalError, OracleError, OutputError, RankDeficiencyError,
                     SelectionError)
from .estimators import EstimateReport, estimate_bias_vector, lasso_rank, tau_aipw, tau_full
from .logs import setup_logging
from .nuisance import fit_nuisances
from .selection import (bias_ranking, estimate_at_k, estimate_full_pipeline, influence_ranking,
                        lasso_select)
from .simgen import MECHANISMS, ScenarioConfig, generate, make_scenario, outlier_indices
from .tabular import (DEFAULT_OUTCOME, DEFAULT_TREAT, OUTCOME_SCALE, load_pool_csv,
                      load_trial_csv, prepare_real_data, write_pool_csv, write_trial_csv)

LOGGER = logging.getLogger(__name__)

# =============================================================================
# CONSTANTS
# =============================================================================

COMMANDS = ("simulate", "estimate", "borrow", "benchmark")
FORMATS = ("csv", "json")
DEFAULT_K = 10

EXIT_CODES = (
    (ConfigError, 2),
    (DataValidationError, 3),
    ((RankDeficiencyError, NumericalError, FitError, SelectionError, OracleError), 4),
    (BenchmarkError, 5),
    (OutputError, 6),
)

# Value types for RunConfig fields whose default is None
_OPTIONAL_TYPES = {
    "scenario": str, "rct": str, "external": str, "method": str, "topk": str,
    "mu2": float, "control_n": int, "out": str, "degree": int, "lambda_reg": float,
    "outcome_scale": float,
}


# =============================================================================
# CONFIGURATION
# =============================================================================

@dataclass(frozen=True)
class RunConfig:
    """One CLI invocation, fully resolved."""

    command: str
    scenario: Optional[str] = None
    rct: Optional[str] = None
    external: Optional[str] = None
    outcome: str = DEFAULT_OUTCOME
    treat: str = DEFAULT_TREAT
    method: Optional[str] = None
    topk: Optional[str] = None
    dense: bool = False
    reps: int = 200
    seed: int = 0
    mu2: Optional[float] = None
    control_n: Optional[int] = None
    out: Optional[str] = None
    format: str = "json"
    bias_mode: str = "abs-mean"
    standardize: bool = True
    outcome_scale: Optional[float] = None
    jobs: int = 1
    plot_data: bool = False
    degree: Optional[int] = None
    lambda_reg: Optional[float] = None
    verbose: int = 0

    # BorrowConfig fields set from a config file (e.g. damping, eps_clip)
    borrow_overrides: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"Unknown command {self.command!r}; choose from {COMMANDS}", "command")
        if self.scenario is not None and self.scenario not in MECHANISMS:
            raise ConfigError(f"Unknown scenario {self.scenario!r}", "scenario")
        if self.method is not None and self.method not in METHODS:
            raise ConfigError(f"Unknown method {self.method!r}; choose from {METHODS}", "method")
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}", "format")
        if self.bias_mode not in BIAS_MODES:
            raise ConfigError(f"bias-mode must be one of {BIAS_MODES}", "bias_mode")
        if self.jobs == 0:
            raise ConfigError("jobs must be nonzero", "jobs")
        if self.outcome_scale is not None and not (np.isfinite(self.outcome_scale)
                                                   and self.outcome_scale > 0):
            raise ConfigError("outcome-scale must be a positive number", "outcome_scale")

        has_files = self.rct is not None or self.external is not None
        if has_files and (self.rct is None or self.external is None):
            raise ConfigError("--rct and --external must be given together", "rct")
        if self.command == "simulate":
            if self.scenario is None:
                raise ConfigError("simulate needs --scenario", "scenario")
        elif (self.scenario is None) == (not has_files):
            raise ConfigError("Give exactly one data source: --scenario or --rct/--external",
                              "scenario")
        for path in (self.rct, self.external):
            if path is not None and not Path(path).is_file():
                raise DataValidationError(f"Data file not found: {path}", path)
        parse_topk(self.topk)

    @property
    def k_list(self) -> Optional[List[int]]:
        return parse_topk(self.topk)

    @property
    def outcome_divisor(self) -> float:
        """--outcome-scale if given; 1e4 for the NSW earnings column, else 1."""
        if self.outcome_scale is not None:
            return float(self.outcome_scale)
        return OUTCOME_SCALE if self.outcome == DEFAULT_OUTCOME else 1.0


def parse_topk(value: Optional[str]) -> Optional[List[int]]:
    """'auto' or None -> None (MSE selection); 'N' or 'N1,N2,...' -> list of k."""
    if value is None or str(value).strip().lower() == "auto":
        return None
    try:
        ks = [int(v) for v in str(value).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--topk expects N, N1,N2,... or auto, got {value!r}", "topk") from None
    if not ks or min(ks) < 0:
        raise ConfigError(f"--topk values must be non-negative integers, got {value!r}", "topk")
    return ks


class ArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors raised as ConfigError instead of exiting."""

    def error(self, message: str):
        raise ConfigError(message, "arguments")


def build_parser() -> ArgumentParser:
    # Every option defaults to None so config-file values are only overridden
    # by flags that were actually given.
    parser = ArgumentParser(
        prog='borrowlab',
        description='Influence-based borrowing of external controls for trial ATE estimation'
    )
    parser.add_argument('command', choices=COMMANDS)
    parser.add_argument('--config', dest='config_file', help='Flat key = value settings file')
    parser.add_argument('--scenario', choices=MECHANISMS)
    parser.add_argument('--rct', help='Trial CSV (treatment, covariates, outcome)')
    parser.add_argument('--external', help='External-control CSV')
    parser.add_argument('--outcome', help=f'Outcome column (default: {DEFAULT_OUTCOME})')
    parser.add_argument('--treat', help=f'Treatment column (default: {DEFAULT_TREAT})')
    parser.add_argument('--method', choices=METHODS)
    parser.add_argument('--topk', help='N, comma-separated N values, or auto')
    parser.add_argument('--dense', action='store_true', default=None,
                        help='Sweep every k instead of the default grid')
    parser.add_argument('--reps', type=int)
    parser.add_argument('--seed', type=int)
    parser.add_argument('--mu2', type=float, help='External covariate mean (simulated data)')
    parser.add_argument('--control-n', dest='control_n', type=int,
                        help='Subsample the trial control arm to this size')
    parser.add_argument('--out', help='Output file (estimate, benchmark) or directory')
    parser.add_argument('--format', choices=FORMATS)
    parser.add_argument('--bias-mode', dest='bias_mode', choices=BIAS_MODES)
    parser.add_argument('--no-standardize', dest='standardize', action='store_false', default=None)
    parser.add_argument('--outcome-scale', dest='outcome_scale', type=float,
                        help=f'Divide file outcomes by this (default: {OUTCOME_SCALE:g} for '
                             f'{DEFAULT_OUTCOME}, 1 otherwise)')
    parser.add_argument('--jobs', type=int, help='joblib workers (-1 = all cores)')
    parser.add_argument('--plot-data', dest='plot_data', action='store_true', default=None,
                        help='Also write per-k MSE curves (benchmark)')
    parser.add_argument('--degree', type=int, help='Polynomial degree of the outcome basis')
    parser.add_argument('--lambda', dest='lambda_reg', type=float, help='Ridge strength')
    parser.add_argument('-v', '--verbose', action='count', default=None)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge flags over config-file values over RunConfig defaults."""
    run_fields = {f.name: f for f in fields(RunConfig)}
    values: Dict[str, object] = {}
    borrow: Dict[str, object] = {}

    if args.config_file:
        defaults = BorrowConfig()
        for key, raw in read_config_file(args.config_file).items():
            if key in run_fields and key not in ("command", "borrow_overrides"):
                default = run_fields[key].default
                if default is None:
                    try:
                        values[key] = _OPTIONAL_TYPES[key](raw)
                    except ValueError:
                        raise ConfigError(f"Could not parse {raw!r}", key) from None
                else:
                    values[key] = coerce_value(raw, default)
            elif key in borrow_config_keys():
                borrow[key] = coerce_value(raw, getattr(defaults, key))
            else:
                raise ConfigError(f"Unknown config key {key!r}", args.config_file)

    for key, value in vars(args).items():
        if key != "config_file" and value is not None:
            values[key] = value
    return RunConfig(borrow_overrides=borrow, **values)


# =============================================================================
# DATA
# =============================================================================

def borrow_config(cfg: RunConfig) -> BorrowConfig:
    """Method configuration for the run: scenario defaults, then overrides."""
    overrides = dict(cfg.borrow_overrides)
    overrides["n_jobs"] = cfg.jobs
    if cfg.dense:
        overrides["dense_grid"] = True
    if cfg.lambda_reg is not None:
        overrides["lambda_reg"] = cfg.lambda_reg
    if cfg.degree is not None:
        overrides["degree"] = cfg.degree
        overrides["feature_kind"] = "polynomial" if cfg.degree > 1 else "linear"
    return BorrowConfig.for_mechanism(cfg.scenario or "linear", **overrides)


def scenario_config(cfg: RunConfig) -> ScenarioConfig:
    overrides = {} if cfg.mu2 is None else {"mu2": cfg.mu2}
    return make_scenario(cfg.scenario, seed=cfg.seed, **overrides)


def load_files(cfg: RunConfig) -> Tuple[TrialDataset, ExternalPool]:
    """Read --rct and --external, then standardize and rescale outcomes."""
    trial = load_trial_csv(cfg.rct, cfg.outcome, cfg.treat)
    pool = load_pool_csv(cfg.external, cfg.outcome, cfg.treat, reference=trial)
    if not cfg.standardize:
        LOGGER.info("Covariate standardization disabled")
    LOGGER.info("Outcomes divided by %g", cfg.outcome_divisor)
    return prepare_real_data(trial, pool, standardize=cfg.standardize,
                             outcome_scale=cfg.outcome_divisor)


def load_data(cfg: RunConfig) -> Tuple[TrialDataset, ExternalPool]:
    """Simulated or file data, with the control arm subsampled if requested."""
    if cfg.scenario is not None:
        trial, pool = generate(scenario_config(cfg))
    else:
        trial, pool = load_files(cfg)
    if cfg.control_n is not None:
        trial = subsample_controls(trial, cfg.control_n, np.random.default_rng(cfg.seed))
    return trial, pool


def _single_k(cfg: RunConfig) -> Optional[int]:
    ks = cfg.k_list
    if ks is None:
        return None
    if len(ks) > 1:
        raise ConfigError(f"{cfg.command} takes a single --topk value", "topk")
    return ks[0]


# =============================================================================
# COMMANDS
# =============================================================================

def _write_json(payload: Dict[str, object], path: Optional[str]) -> None:
    text = json.dumps(payload, indent=2, default=_json_default)
    if path is None:
        print(text)
        return
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text + "\n")


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Not JSON serializable: {type(value).__name__}")


def _out_dir(cfg: RunConfig, default: str) -> Path:
    out = Path(cfg.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(cfg: RunConfig) -> Dict[str, str]:
    sc = scenario_config(cfg)
    trial, pool = generate(sc)
    out = _out_dir(cfg, f"./output/simulate/{cfg.scenario}")

    paths = {name: str(out / f"{name}.csv") for name in ("trial", "external", "covariates")}
    write_trial_csv(paths["trial"], trial)
    write_pool_csv(paths["external"], pool)
    describe(trial, pool).to_csv(paths["covariates"], index=False)

    meta = sc.describe()
    if sc.mechanism == "oneD":
        meta["outlier_indices"] = outlier_indices(pool, sc.n_outliers).tolist()
    paths["scenario"] = str(out / "scenario.json")
    _write_json(meta, paths["scenario"])
    LOGGER.info("Simulated %s: trial %d rows, pool %d rows -> %s", sc.mechanism, trial.n,
                len(pool), out)
    return paths


def estimate(cfg: RunConfig, trial: TrialDataset, pool: ExternalPool,
             bcfg: BorrowConfig) -> EstimateReport:
    method = cfg.method or "if"
    k = _single_k(cfg)
    ns0 = fit_nuisances(trial, pool, [], bcfg)

    if method == "aipw":
        return tau_aipw(trial, ns0)
    if method == "full":
        ns_full = fit_nuisances(trial, pool, range(len(pool)), bcfg, base=ns0)
        return tau_full(trial, pool, ns_full)
    if method == "lasso":
        if k is None:
            return lasso_select(trial, pool, ns0, bcfg).report
        order = lasso_rank(estimate_bias_vector(trial, pool, ns0))
        return estimate_at_k(trial, pool, order, min(k, len(pool)), bcfg, ns0, "lasso")
    if k is None:
        return estimate_full_pipeline(trial, pool, bcfg, "influence", base=ns0).report
    order = influence_ranking(trial, pool, bcfg, ns0).order
    return estimate_at_k(trial, pool, order, min(k, len(pool)), bcfg, ns0, "if")


def cmd_estimate(cfg: RunConfig) -> Dict[str, str]:
    trial, pool = load_data(cfg)
    report = estimate(cfg, trial, pool, borrow_config(cfg))
    LOGGER.info("%s: tau_hat = %.6g (se %.3g), %d borrowed", report.method, report.tau_hat,
                report.se_hat, report.k_borrowed)
    if cfg.format == "json":
        _write_json(report.to_dict(), cfg.out)
    else:
        row = {k: v for k, v in report.to_dict().items() if k != "diagnostics"}
        frame = pd.DataFrame([row])
        if cfg.out is None:
            print(frame.to_csv(index=False, float_format="%.17g"), end="")
        else:
            Path(cfg.out).parent.mkdir(parents=True, exist_ok=True)
            frame.to_csv(cfg.out, index=False, float_format="%.17g")
    return {"report": cfg.out or "<stdout>"}


def cmd_borrow(cfg: RunConfig) -> Dict[str, str]:
    method = cfg.method or "if"
    if method not in ("if", "lasso"):
        raise ConfigError("borrow ranks the pool with --method if or lasso", "method")
    source = "influence" if method == "if" else "lasso-bias"
    trial, pool = load_data(cfg)
    bcfg = borrow_config(cfg)
    ns0 = fit_nuisances(trial, pool, [], bcfg)
    ranking = None
    if len(pool):
        ranking = influence_ranking(trial, pool, bcfg, ns0) if method == "if" else bias_ranking(trial, pool, ns0)
    result = estimate_full_pipeline(trial, pool, bcfg, source, base=ns0, ranking=ranking)

    k = _single_k(cfg)
    report, selected = result.report, result.selected
    if k is not None and ranking is not None:
        k = min(k, len(pool))
        report = estimate_at_k(trial, pool, ranking.order, k, bcfg, ns0, method)
        selected = ranking.order[:k]

    out = _out_dir(cfg, "./output/borrow")
    paths = {"profile": str(out / "profile.csv"), "selected": str(out / "selected.json"),
             "ranking": str(out / f"ranking.{cfg.format}")}
    records = ranking.to_records() if ranking is not None else []
    if cfg.format == "json":
        _write_json({"ranking_source": source, "ties_broken_by": "pool-index",
                     "ranking": records}, paths["ranking"])
    else:
        pd.DataFrame(records, columns=["index", "score"]).to_csv(
            paths["ranking"], index=False, float_format="%.17g")
    result.profile.to_csv(paths["profile"])
    _write_json({
        "ranking_source": source,
        "k_rule": "mse" if k is None else "fixed",
        "k": int(len(selected)),
        "selected": sorted(int(j) for j in selected),
        "estimate": report.to_dict(),
    }, paths["selected"])
    LOGGER.info("Borrowed %d of %d external controls -> %s", len(selected), len(pool), out)
    return paths


def cmd_benchmark(cfg: RunConfig) -> Dict[str, str]:
    bcfg = borrow_config(cfg)
    methods: Sequence[str] = METHODS if cfg.method is None else (cfg.method,)
    k_list = cfg.k_list or [DEFAULT_K]
    common = dict(methods=methods, k_list=k_list, reps=cfg.reps, base_seed=cfg.seed,
                  borrow_cfg=bcfg, bias_mode=cfg.bias_mode, n_jobs=cfg.jobs,
                  progress=sys.stderr.isatty())

    if cfg.scenario is not None:
        table = run_monte_carlo(scenario_config(cfg), control_n=cfg.control_n, **common)
    else:
        trial, pool = load_files(cfg)
        control_n = cfg.control_n if cfg.control_n is not None else trial.n_control
        table = run_real_data(trial, pool, control_n, **common)

    out = Path(cfg.out or f"./output/benchmark.{cfg.format}")
    out.parent.mkdir(parents=True, exist_ok=True)
    if cfg.format == "csv":
        table.to_csv(str(out))
    else:
        table.to_json(str(out))
    paths = {"metrics": str(out)}
    if cfg.plot_data:
        paths["curves"] = str(out.with_name(f"{out.stem}_curves.csv"))
        table.curves().to_csv(paths["curves"], index=False, float_format="%.17g")
    LOGGER.info("Benchmark metrics -> %s", out)
    return paths


_COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "borrow": cmd_borrow,
    "benchmark": cmd_benchmark,
}


def run(cfg: RunConfig) -> int:
    """Execute one command; errors propagate as BorrowLabError."""
    paths = _COMMANDS[cfg.command](cfg)
    LOGGER.debug("Artifacts: %s", paths)
    return 0


def exit_code(exc: BorrowLabError) -> int:
    for types, code in EXIT_CODES:
        if isinstance(exc, types):
            return code
    return 1


# =============================================================================
# SCRIPT ENTRY POINT
# =============================================================================

def main(argv: Optional[Sequence[str]] = None) -> int:
    setup_logging(0)
    try:
        args = build_parser().parse_args(argv)
        setup_logging(args.verbose or 0)
        cfg = resolve_config(args)
        setup_logging(cfg.verbose)
        try:
            return run(cfg)
        except OSError as exc:
            locus = str(exc.filename) if exc.filename is not None else None
            raise OutputError(exc.strerror or str(exc), locus) from exc
    except BorrowLabError as exc:
        LOGGER.debug("Command failed", exc_info=True)
        print(json.dumps({"error": exc.to_record()}), file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
