"""
Command-line interface for the Implied Weights Toolkit

Commands:
- weights: implied weights of a regression estimator with their metadata
- estimate: weights plus the Hajek estimate and a direct regression check
- diagnose: balance, weight dispersion, extrapolation, influence and plot data
- qp-check: certification of the closed-form weights against the KKT solve
- simulate: convergence and consistency experiments on seeded designs
"""

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from config.settings import Settings
from core.dataset import Dataset, DatasetSchema, load_dataset, profile
from core.diagnostics import diagnose, plot_data
from core.errors import CertificationError, ConfigError, ImpliedWeightsError
from core.estimators import (
    EstimateResult,
    dr_estimate_direct,
    hajek_estimate,
    mri_estimate_direct,
    multivalued_estimate_direct,
    uri_estimate_direct,
    wmri_estimate_direct,
    wuri_estimate_direct,
)
from core.qp_oracle import certify
from core.simulation import consistency_experiment, scenario, scenario_names, weight_convergence_experiment
from core.weights import Estimand, Method, WeightSet, compute_weights, dr_weights, normalize_within_groups

from .report import emit_report, write_table, write_weight_table

logger = logging.getLogger(__name__)

COMMANDS = ("weights", "estimate", "diagnose", "qp-check", "simulate")
FORMATS = ("json", "csv")
LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'
DEFAULT_SCENARIOS = ("mri_iii", "mri_iv", "uri_overlap")


def _split(text: Optional[str]) -> Tuple[str, ...]:
    if text is None:
        return ()
    return tuple(item.strip() for item in text.split(",") if item.strip())


def _scenarios(text: Optional[str]) -> Tuple[str, ...]:
    """Scenario names; an entry ending in * selects every name with that prefix"""
    if not text:
        return DEFAULT_SCENARIOS
    names: List[str] = []
    for item in _split(text):
        selected = scenario_names(item[:-1]) if item.endswith("*") else [item]
        names.extend(name for name in selected if name not in names)
    return tuple(names)


def _floats(text: Optional[str], what: str) -> Optional[Tuple[float, ...]]:
    if text is None:
        return None
    try:
        return tuple(float(item) for item in _split(text))
    except ValueError:
        raise ConfigError(f"{what} must be a comma-separated list of numbers, got '{text}'") from None


def _ints(text: Optional[str], what: str) -> Optional[Tuple[int, ...]]:
    if text is None:
        return None
    try:
        return tuple(int(item) for item in _split(text))
    except ValueError:
        raise ConfigError(f"{what} must be a comma-separated list of integers, got '{text}'") from None


@dataclass(frozen=True)
class RunConfig:
    """
    One fully resolved command invocation

    Flags override settings; settings override built-in defaults.
    """

    command: str
    input: Optional[str] = None
    treatment_col: str = "treatment"
    outcome_col: Optional[str] = None
    base_weight_col: Optional[str] = None
    covariates: Optional[Tuple[str, ...]] = None
    method: str = "URI"
    estimand: str = "ATE"
    profile: Optional[str] = None
    target: Optional[Tuple[float, ...]] = None
    active_level: Optional[int] = None
    out_dir: str = "output"
    formats: Tuple[str, ...] = FORMATS
    delimiter: str = ","
    extreme_multiple: float = 10.0
    covariate: Optional[str] = None
    scenarios: Tuple[str, ...] = DEFAULT_SCENARIOS
    seed: int = 20240101
    n_grid: Tuple[int, ...] = (1000, 4000, 16000)
    reps: int = 50
    workers: int = 1
    max_attempts: int = 20
    singularity_threshold: float = 1e-10
    weight_sum_tolerance: float = 1e-8
    base_normalization_tolerance: float = 1e-8
    kkt_tolerance: float = 1e-8
    digits: int = 12

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """
        Check the configuration is mutually consistent

        Raises:
            ConfigError: describing the first inconsistency
        """
        if self.command not in COMMANDS:
            raise ConfigError(f"Unknown command '{self.command}'")
        for name in self.formats:
            if name not in FORMATS:
                raise ConfigError(f"Unknown output format '{name}'; expected json or csv")
        if not self.formats:
            raise ConfigError("At least one output format is required")
        if not 1 <= self.digits <= 17:
            raise ConfigError(f"Significant digits must lie in 1..17, got {self.digits}")
        if self.command == "simulate":
            if self.reps < 1:
                raise ConfigError(f"--reps must be positive, got {self.reps}")
            if not self.n_grid or min(self.n_grid) < 1:
                raise ConfigError("--n-grid needs positive sample sizes")
            if self.workers < 1:
                raise ConfigError(f"--workers must be positive, got {self.workers}")
            if not self.scenarios:
                raise ConfigError("--scenario selects no scenarios")
            return

        if not self.input:
            raise ConfigError(f"'{self.command}' needs --input")
        method = Method.parse(self.method)
        estimand = Estimand.parse(self.estimand)
        if self.command == "estimate" and not self.outcome_col:
            raise ConfigError("'estimate' needs --outcome-col")
        if method.needs_base and not self.base_weight_col:
            raise ConfigError(f"{method.value} needs --base-weight-col")
        if estimand is Estimand.CATE and self.target is None and self.profile in (None, "custom"):
            raise ConfigError("CATE needs --target or a named --profile")
        if self.profile == "custom" and self.target is None:
            raise ConfigError("--profile custom needs --target")
        if self.active_level is not None and not method.is_multivalued:
            raise ConfigError("--active-level applies to multi-valued methods only")
        if self.extreme_multiple <= 0:
            raise ConfigError(f"--extreme-multiple must be positive, got {self.extreme_multiple}")

    @property
    def method_enum(self) -> Method:
        return Method.parse(self.method)

    @property
    def estimand_enum(self) -> Estimand:
        return Estimand.parse(self.estimand)

    def to_dict(self) -> Dict[str, object]:
        """Configuration echo without the output directory"""
        values = asdict(self)
        values.pop("out_dir")
        return values


def build_parser() -> argparse.ArgumentParser:
    """Create the argument parser with one subcommand per operation"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Settings file (JSON)")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Logging level")
    common.add_argument("--out-dir", help="Directory for artifacts")
    common.add_argument("--format", help="Comma-separated output formats: json, csv")
    common.add_argument("--delimiter", help="Field separator of input and output tables")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--input", required=True, help="Delimiter-separated input table with a header row")
    data.add_argument("--treatment-col", default="treatment", help="Treatment column")
    data.add_argument("--outcome-col", help="Outcome column")
    data.add_argument("--base-weight-col", help="Base-weight column (WURI, WMRI, DR)")
    data.add_argument("--covariates", help="Comma-separated covariate columns (default: all other numeric columns)")
    data.add_argument("--method", default="uri", help="uri, mri, wuri, wmri, dr, multi-uri, multi-mri, no-intercept-uri, no-intercept-mri")
    data.add_argument("--estimand", default="ATE", help="ATE, ATT, ATC, CATE or ATE_v1")
    data.add_argument("--profile", choices=["full_mean", "treated_mean", "control_mean", "custom"], help="Target profile for CATE")
    data.add_argument("--target", help="Comma-separated custom target profile")
    data.add_argument("--active-level", type=int, help="Active level v of a multi-valued treatment (default 2)")

    parser = argparse.ArgumentParser(
        prog="impliedw",
        description="Implied weights, estimates and diagnostics of regression estimators of causal effects",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("weights", parents=[common, data], help="Compute implied weights")
    commands.add_parser("estimate", parents=[common, data], help="Weights plus the Hajek estimate")
    diagnose_parser = commands.add_parser("diagnose", parents=[common, data], help="Design-stage diagnostics")
    diagnose_parser.add_argument("--extreme-multiple", type=float, help="Flag |w| above this multiple of 1/n_g")
    diagnose_parser.add_argument("--covariate", help="Covariate shown in the bubble-plot data")
    commands.add_parser("qp-check", parents=[common, data], help="Certify weights against the KKT solve")

    simulate = commands.add_parser("simulate", parents=[common], help="Run simulation experiments")
    simulate.add_argument("--scenario", help="Comma-separated scenario names; a trailing * matches a prefix")
    simulate.add_argument("--seed", type=int, help="Base seed")
    simulate.add_argument("--n-grid", help="Comma-separated sample sizes")
    simulate.add_argument("--reps", type=int, help="Replications per sample size")
    simulate.add_argument("--workers", type=int, help="Threads running replications")
    return parser


def config_from_args(args: argparse.Namespace, settings: Settings) -> RunConfig:
    """Resolve parsed flags against settings into a RunConfig"""

    def pick(flag: object, key: str) -> object:
        return flag if flag is not None else settings.get(key)

    values: Dict[str, object] = {
        "command": args.command,
        "out_dir": pick(args.out_dir, "output_dir"),
        "formats": _split(args.format) if args.format else FORMATS,
        "delimiter": pick(args.delimiter, "delimiter"),
        "singularity_threshold": float(settings.get("singularity_threshold")),
        "weight_sum_tolerance": float(settings.get("weight_sum_tolerance")),
        "base_normalization_tolerance": float(settings.get("base_normalization_tolerance")),
        "kkt_tolerance": float(settings.get("kkt_tolerance")),
        "digits": int(settings.get("significant_digits")),
        "max_attempts": int(settings.get("max_regeneration_attempts")),
    }
    if args.command == "simulate":
        values.update(
            {
                "scenarios": _scenarios(args.scenario),
                "seed": int(pick(args.seed, "default_seed")),  # type: ignore[arg-type]
                "n_grid": _ints(args.n_grid, "--n-grid") or tuple(settings.get("default_n_grid")),
                "reps": int(pick(args.reps, "default_reps")),  # type: ignore[arg-type]
                "workers": int(pick(args.workers, "workers")),  # type: ignore[arg-type]
            }
        )
    else:
        values.update(
            {
                "input": args.input,
                "treatment_col": args.treatment_col,
                "outcome_col": args.outcome_col,
                "base_weight_col": args.base_weight_col,
                "covariates": _split(args.covariates) if args.covariates else None,
                "method": args.method,
                "estimand": args.estimand,
                "profile": args.profile,
                "target": _floats(args.target, "--target"),
                "active_level": args.active_level,
            }
        )
        if args.command == "diagnose":
            values["extreme_multiple"] = float(pick(args.extreme_multiple, "extreme_weight_multiple"))  # type: ignore[arg-type]
            values["covariate"] = args.covariate
    return RunConfig(**values)  # type: ignore[arg-type]


def _load(config: RunConfig) -> Dataset:
    schema = DatasetSchema(
        treatment=config.treatment_col,
        outcome=config.outcome_col,
        base_weight=config.base_weight_col,
        covariates=config.covariates,
        multivalued=config.method_enum.is_multivalued,
        delimiter=config.delimiter,
    )
    return load_dataset(config.input, schema, config.singularity_threshold)  # type: ignore[arg-type]


def _weights(d: Dataset, config: RunConfig) -> WeightSet:
    method, estimand = config.method_enum, config.estimand_enum
    x = None
    if estimand is Estimand.CATE:
        x = profile(d, config.profile or "custom", config.target)
    if method is Method.DR:
        base = normalize_within_groups(d, d.base_weights)  # type: ignore[arg-type]
        w = dr_weights(d, base, config.base_normalization_tolerance)
    else:
        w = compute_weights(d, method, estimand, x, active_level=config.active_level)
    w.check_normalization(config.weight_sum_tolerance)
    return w


def _direct_estimate(d: Dataset, w: WeightSet) -> Optional[EstimateResult]:
    """Regression computed from its definition, for methods that have one"""
    if w.method is Method.URI:
        return uri_estimate_direct(d)
    if w.method is Method.MRI:
        return mri_estimate_direct(d, w.estimand, w.target)
    if w.method is Method.WURI:
        return wuri_estimate_direct(d)
    if w.method is Method.WMRI:
        return wmri_estimate_direct(d, None, w.target)
    if w.method is Method.DR:
        return dr_estimate_direct(d)
    if w.method.is_multivalued:
        return multivalued_estimate_direct(d, w.active_label, w.method)
    return None


def _weights_section(w: WeightSet) -> Dict[str, object]:
    return {
        "method": w.method.value,
        "estimand": w.estimand.value,
        "active_label": w.active_label,
        "target": w.target.to_dict(),
        "group_sums": {str(g): s for g, s in sorted(w.group_sums.items())},
        "metadata": dict(w.metadata),
    }


class Runner:
    """Executes one RunConfig and writes its artifacts"""

    def __init__(self, config: RunConfig):
        self.config = config
        self.out_dir = Path(config.out_dir)
        self.sections: Dict[str, object] = {}
        self.written: List[str] = []

    @property
    def wants_csv(self) -> bool:
        return "csv" in self.config.formats

    def table(self, frame: pd.DataFrame, name: str) -> None:
        if self.wants_csv:
            write_table(frame, self.out_dir / name, self.config.delimiter, self.config.digits)
            self.written.append(name)

    def report(self) -> None:
        if "json" in self.config.formats:
            emit_report(
                self.out_dir / "report.json",
                self.config.command,
                self.config.to_dict(),
                self.sections,
                self.config.digits,
            )
            self.written.append("report.json")

    def run(self) -> int:
        command = self.config.command
        logger.info(f"Running '{command}'")
        try:
            if command == "simulate":
                self.simulate()
            else:
                self.dataset_command(command)
        finally:
            logger.info(f"Artifacts in {self.out_dir}: {', '.join(self.written) or 'none'}")
        return 0

    def dataset_command(self, command: str) -> None:
        d = _load(self.config)
        w = _weights(d, self.config)
        self.sections["weights"] = _weights_section(w)
        if self.wants_csv:
            write_weight_table(self.out_dir / "weights.csv", d, w, self.config.delimiter, self.config.digits)
            self.written.append("weights.csv")

        if command == "estimate":
            self.estimate(d, w)
        elif command == "diagnose":
            self.diagnose(d, w)
        elif command == "qp-check":
            self.qp_check(d, w)
            return
        self.report()

    def estimate(self, d: Dataset, w: WeightSet) -> None:
        result = hajek_estimate(d, w)
        section = result.to_dict()
        direct = _direct_estimate(d, w)
        if direct is not None:
            section["direct_value"] = direct.value
            section["direct_gap"] = abs(direct.value - result.value)
        self.sections["estimate"] = section

    def diagnose(self, d: Dataset, w: WeightSet) -> None:
        result = diagnose(d, w, self.config.extreme_multiple)
        self.sections["diagnostics"] = result.summary()
        self.table(result.balance.to_frame(), "balance.csv")
        self.table(result.weights.to_frame(), "weight_stats.csv")
        self.table(result.extrapolation.flags, "extrapolation.csv")
        self.table(plot_data(d, w, "love", table=result.balance), "plot_love.csv")
        self.table(plot_data(d, w, "density"), "plot_density.csv")
        self.table(plot_data(d, w, "bubble", covariate=self.config.covariate), "plot_bubble.csv")
        if result.influence is not None:
            self.table(result.influence, "plot_influence.csv")

    def qp_check(self, d: Dataset, w: WeightSet) -> None:
        certificate = certify(w, d, self.config.kkt_tolerance)
        self.sections["certification"] = certificate.to_dict()
        self.table(pd.DataFrame([g.to_dict() for g in certificate.groups]), "certification.csv")
        self.report()
        if not certificate.passed:
            raise CertificationError(
                f"{w.method.value} weights differ from the KKT optimum by {certificate.max_discrepancy:.3e}"
            )

    def simulate(self) -> None:
        config = self.config
        convergence = [name for name in config.scenarios if name.startswith("convergence_")]
        if convergence and len(convergence) != len(config.scenarios):
            raise ConfigError("Convergence scenarios cannot be mixed with consistency scenarios in one run")
        if convergence:
            reports = [
                weight_convergence_experiment(
                    scenario(name, seed=config.seed),
                    config.n_grid,
                    config.reps,
                    workers=config.workers,
                    max_attempts=config.max_attempts,
                )
                for name in convergence
            ]
        else:
            reports = [
                consistency_experiment(
                    config.scenarios,
                    config.n_grid,
                    config.reps,
                    workers=config.workers,
                    seed=config.seed,
                    max_attempts=config.max_attempts,
                )
            ]
        self.sections["simulation"] = [r.to_dict() for r in reports]
        self.table(pd.concat([r.records for r in reports], ignore_index=True), "simulation_records.csv")
        self.table(pd.concat([r.summary for r in reports], ignore_index=True), "simulation_summary.csv")
        self.report()


def run(config: RunConfig) -> int:
    """
    Execute one command

    Returns:
        0 on success

    Raises:
        ImpliedWeightsError: with the exit code of the failure class
    """
    return Runner(config).run()


def error_line(error: BaseException, code: int) -> str:
    """Single-line machine-parsable error record"""
    return json.dumps({"error": type(error).__name__, "code": code, "message": str(error)}, sort_keys=True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, configure logging and run; returns the exit status"""
    args = build_parser().parse_args(argv)
    settings = Settings(args.config) if args.config else Settings()
    level = args.log_level or str(settings.get("log_level", "INFO")).upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format=LOG_FORMAT)

    try:
        config = config_from_args(args, settings)
        if config.input:
            settings.add_recent_input(str(Path(config.input)))
        return run(config)
    except ImpliedWeightsError as e:
        logger.debug(f"{type(e).__name__}: {e}")
        print(error_line(e, e.exit_code), file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception("Unexpected failure")
        print(error_line(e, 1), file=sys.stderr)
        return 1
