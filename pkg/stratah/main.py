"""
Command-line entry point.

    stratah analyze --data trial.csv --tau 48 --control placebo
    stratah simulate --scenario paper_pattern1_n700 --reps 200 --format json

Reports go to stdout, structured logs to stderr. Exit codes: 0 success,
2 usage, 3 parse/scenario error, 4 invalid input, 5 estimation error,
6 simulation aborted.
"""

import argparse
import sys
from typing import List, Optional

from stratah import __version__
from stratah.cli_io import (
    ANALYSIS_METHODS,
    AnalysisConfig,
    OutputFormat,
    analyze,
    read_dataset,
    render,
    simulate,
)
from stratah.config import settings
from stratah.exceptions import InvalidInput, StratahError
from stratah.logging_config import setup_logging
from stratah.sim_harness import load_scenario
from stratah.stratified_inference import Method, WeightKind, WeightScheme

WEIGHT_KEYWORDS = {
    "equal": WeightKind.EQUAL,
    "size": WeightKind.SAMPLE_SIZE_PROPORTIONAL,
    "cmh1": WeightKind.CMH1,
    "cmh2": WeightKind.CMH2,
    "inverse_variance": WeightKind.INVERSE_VARIANCE,
}


def parse_weights(value: str) -> WeightScheme:
    """``equal``, ``size``, ``cmh1``, ``cmh2``, ``inverse_variance`` or a list w1,w2,... in stratum order."""
    keyword = value.strip().lower()
    if keyword in WEIGHT_KEYWORDS:
        return WeightScheme(kind=WEIGHT_KEYWORDS[keyword])
    try:
        weights = [float(w) for w in value.split(",") if w.strip()]
    except ValueError:
        raise InvalidInput(f"--weights must be a keyword or a comma-separated list of numbers, got {value!r}") from None
    return WeightScheme(kind=WeightKind.USER_SUPPLIED, user_weights=weights)


def parse_methods(value: str) -> List[Method]:
    if value.strip().lower() == "all":
        return list(ANALYSIS_METHODS)
    try:
        return [Method(m.strip().lower()) for m in value.split(",") if m.strip()]
    except ValueError:
        choices = ", ".join(m.value for m in ANALYSIS_METHODS)
        raise InvalidInput(f"--method takes 'all' or a list of {choices}; got {value!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stratah", description="Stratified average hazard analysis")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="Override STRATAH_LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True)

    analyze_cmd = commands.add_parser("analyze", help="Analyze a stratified two-arm dataset")
    analyze_cmd.add_argument("--data", required=True, help="Delimited file with time, status, arm, stratum")
    analyze_cmd.add_argument("--tau", required=True, type=float, help="Truncation time")
    analyze_cmd.add_argument("--control", required=True, help="Arm label of the control group")
    analyze_cmd.add_argument("--alpha", type=float, default=settings.default_alpha)
    analyze_cmd.add_argument("--method", default="all", help="all, or a list of proposed,conventional,cmh1,cmh2")
    analyze_cmd.add_argument("--weights", default="size", help="equal | size | cmh1 | cmh2 | inverse_variance | w1,w2,...")
    analyze_cmd.add_argument("--unit", type=int, choices=(1, 100), default=settings.default_unit_scale)
    analyze_cmd.add_argument("--format", choices=[f.value for f in OutputFormat], default=OutputFormat.TABLE.value)
    analyze_cmd.add_argument("--group-ci", choices=("natural", "log"), default="natural")
    analyze_cmd.add_argument("--variance-form", choices=("printed", "linearized"), default=None,
                             help="Standardized AH variance integrand (default STRATAH_VARIANCE_FORM, printed)")

    simulate_cmd = commands.add_parser("simulate", help="Run a Monte Carlo scenario")
    simulate_cmd.add_argument("--scenario", required=True, help="Scenario file or bundled scenario name")
    simulate_cmd.add_argument("--reps", type=int, default=None, help="Override the replication count")
    simulate_cmd.add_argument("--seed", type=int, default=None, help="Override the seed")
    simulate_cmd.add_argument("--jobs", type=int, default=None, help="joblib workers (default STRATAH_N_JOBS)")
    simulate_cmd.add_argument("--unit", type=int, choices=(1, 100), default=settings.default_unit_scale)
    simulate_cmd.add_argument("--format", choices=[f.value for f in OutputFormat], default=OutputFormat.TABLE.value)
    return parser


def run_analyze(args: argparse.Namespace) -> str:
    config = AnalysisConfig.build(
        tau=args.tau,
        alpha=args.alpha,
        methods=parse_methods(args.method),
        weights=parse_weights(args.weights),
        unit_scale=args.unit,
        output_format=args.format,
        group_ci_scale=args.group_ci,
        variance_form=args.variance_form,
    )
    dataset = read_dataset(args.data, args.control)
    return render(analyze(dataset, config), config.output_format)


def run_simulate(args: argparse.Namespace) -> str:
    scenario = load_scenario(args.scenario)
    report = simulate(scenario, replications=args.reps, seed=args.seed, n_jobs=args.jobs, unit_scale=args.unit)
    return render(report, args.format)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logger = setup_logging(log_level=args.log_level or settings.log_level, json_output=settings.log_json)

    try:
        output = run_analyze(args) if args.command == "analyze" else run_simulate(args)
    except StratahError as e:
        logger.debug("Command failed", command=args.command, error_type=type(e).__name__, exc_info=True)
        print(f"stratah: error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.error("Unexpected failure", command=args.command, error=str(e), exc_info=True)
        print(f"stratah: internal error: {e}", file=sys.stderr)
        return 1

    sys.stdout.write(output)
    return 0


if __name__ == "__main__":
    sys.exit(main())
