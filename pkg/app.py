"""
CCC Fiducial - Command-line Application

Fiducial, Fisher-Z and bootstrap confidence intervals for the longitudinal
concordance correlation coefficient under generalized linear mixed models.

    ccc-fiducial fit ratings.csv --family poisson
    ccc-fiducial interval ratings.csv --methods fiducial,fisher_z --seed 7
    ccc-fiducial bounds ratings.csv
    ccc-fiducial simulate gaussian_two_rater --replications 200 --workers 8

Results go to stdout as JSON, logs to stderr.
Exit codes: 0 success, 1 usage or input error, 2 runtime failure.
"""

import argparse
import sys
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from config.constants import APP_DESCRIPTION, APP_NAME, APP_VERSION, EXIT_OK, EXIT_RUNTIME
from core.exceptions import AgreementError, ConfigError
from core.models.base import CccMethod, CccNormalization, DrawMode, Family
from core.models.run_config import Command, RunConfig
from core.parsers import parse_config_file
from core.runner import run_bounds, run_fit, run_interval, run_simulate
from generators.report import render_json, render_table, write_report
from utils.logger import get_logger, setup_logging

logger = get_logger("app")

# Options that steer the process rather than the run
PROCESS_OPTIONS = {"config", "log_level", "log_file"}


class UsageParser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors as ConfigError (exit code 1)."""

    def error(self, message: str):
        raise ConfigError(f"{self.prog}: {message}")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value run configuration file (flags win)")
    parser.add_argument("--seed", type=int, help="master seed (generated and echoed when absent)")
    parser.add_argument("--alpha", type=float, help="1 - confidence level (default 0.05)")
    parser.add_argument("--n-mc", type=int, help="Monte Carlo size for numerical CCC evaluation")
    parser.add_argument("--ccc-method", choices=[m.value for m in CccMethod])
    parser.add_argument("--output", "-o", help="also write the JSON result to this file")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--log-file", help="append logs to this file")


def _add_model(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--family", choices=[f.value for f in Family])
    parser.add_argument("--spline-order", "-S", type=int, help="order of the subject-level random polynomial")
    parser.add_argument("--fixed-order", type=int, help="order of the fixed time polynomial")
    parser.add_argument("--time-origin", type=int, choices=[0, 1], help="first time point value")
    parser.add_argument("--time-scale", type=float, help="spacing between time points")
    parser.add_argument("--interaction", action=argparse.BooleanOptionalAction, default=None,
                        help="subject-time random effect (default: present when there are replicates)")
    parser.add_argument("--eta-floor", type=float, help="Gamma linear predictors must exceed this")
    parser.add_argument("--normalization", choices=[n.value for n in CccNormalization])


def _add_interval(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--methods", help="comma-separated: fiducial, fisher_z, bootstrap")
    parser.add_argument("--n-draws", type=int, help="fiducial draws per interval")
    parser.add_argument("--n-boot", type=int, help="bootstrap resamples")
    parser.add_argument("--mode", choices=[m.value for m in DrawMode], help="predictor covariance pivot")


def build_parser() -> UsageParser:
    parser = UsageParser(prog="ccc-fiducial", description=APP_DESCRIPTION)
    parser.add_argument("--version", action="version", version=f"{APP_NAME} {APP_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=UsageParser)

    fit = sub.add_parser(Command.FIT.value, help="fit the mixed model and report estimates")
    fit.add_argument("dataset", nargs="?", help="long-format CSV: subject,time,replicate,rater,value")
    _add_model(fit)
    _add_common(fit)

    interval = sub.add_parser(Command.INTERVAL.value, help="CCC intervals per rater pair and for all raters")
    interval.add_argument("dataset", nargs="?", help="long-format CSV: subject,time,replicate,rater,value")
    _add_model(interval)
    _add_interval(interval)
    _add_common(interval)

    bounds = sub.add_parser(Command.BOUNDS.value, help="attainable CCC range and plug-in CCC")
    bounds.add_argument("dataset", nargs="?", help="long-format CSV: subject,time,replicate,rater,value")
    _add_model(bounds)
    _add_common(bounds)

    simulate = sub.add_parser(Command.SIMULATE.value, help="coverage and width study on a scenario")
    simulate.add_argument("scenario", nargs="?", help="catalog name or path to a scenario JSON file")
    simulate.add_argument("--n-subjects", help="comma-separated study sizes (default: the scenario's)")
    simulate.add_argument("--replications", dest="n_replications", type=int)
    simulate.add_argument("--allow-few-replications", action="store_true", default=None,
                          help="permit fewer than 100 replications (smoke runs)")
    simulate.add_argument("--workers", dest="n_workers", type=int, help="worker processes")
    simulate.add_argument("--table", help="write the aligned text table here (default: stderr)")
    _add_interval(simulate)
    _add_common(simulate)
    return parser


def build_config(args: argparse.Namespace) -> RunConfig:
    """Merge the config file and the flags (flags win) into a RunConfig."""
    values: Dict[str, Any] = {}
    if args.config:
        values.update(parse_config_file(args.config))
    flags = {k: v for k, v in vars(args).items() if v is not None and k not in PROCESS_OPTIONS}
    values.update(flags)
    try:
        return RunConfig.model_validate(values).with_seed()
    except ValidationError as e:
        problems = "; ".join(f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors())
        raise ConfigError(f"invalid configuration: {problems}") from e


def execute(config: RunConfig) -> Dict[str, Any]:
    """Run one command and return its JSON payload."""
    payload: Dict[str, Any] = {"command": config.command.value, "seed": config.seed, "config": config.echo()}
    if config.command == Command.FIT:
        payload["result"] = run_fit(config)
    elif config.command == Command.INTERVAL:
        payload["records"] = run_interval(config)
    elif config.command == Command.BOUNDS:
        payload["records"] = run_bounds(config)
    else:
        report = run_simulate(config)
        table = render_table(report)
        if config.table:
            write_report(table, config.table)
            logger.info("Table written to %s", config.table)
        else:
            sys.stderr.write(table)
        payload["report"] = report.model_dump(mode="json")
    return payload


def main(argv: Optional[List[str]] = None) -> int:
    """CLI entry point; returns the process exit code."""
    try:
        args = build_parser().parse_args(argv)
        setup_logging(args.log_level, args.log_file)
        config = build_config(args)
        logger.info("%s: seed %d", config.command.value, config.seed)
        text = render_json(execute(config))
    except AgreementError as e:
        logger.error("%s: %s", type(e).__name__, e.message)
        sys.stdout.write(render_json(e.to_dict()))
        return e.exit_code
    except Exception as e:
        logger.exception("Unexpected failure")
        sys.stdout.write(render_json({"error": type(e).__name__, "message": str(e)}))
        return EXIT_RUNTIME

    sys.stdout.write(text)
    if config.output:
        write_report(text, config.output)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
