"""
ClusterReserve - Command Line Runner
------------------------------------
Flow:
config -> scenario -> predictor / simulator -> CSV or JSON

Commands:
    python3 run.py predict  --config config/study.yaml
    python3 run.py figure   --config config/study.yaml --output out/figure
    python3 run.py simulate --config config/smoke.yaml --seed 42 --threads 4
    python3 run.py validate --config config/smoke.yaml

Exit codes: 0 ok, 2 config error, 3 numerical failure, 4 validation failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import traceback
from typing import List, Optional

from dotenv import load_dotenv

from cli.commands import cmd_figure, cmd_predict, cmd_simulate, cmd_validate, run_inputs, with_seed, worst_z
from config.config_loader import ConfigError, SEED_LIMIT, load_config
from core.errors import ClusterReserveError
from reporting.writers import emit, write_figure

logger = logging.getLogger("clusterreserve")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_VALIDATION = 4

DEFAULT_FIGURE_DIR = "output/figure"


# ============================================================
# Helpers
# ============================================================

def _seed(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}")
    if not (0 <= value < SEED_LIMIT):
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _threads(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"threads must be an integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError("threads must be >= 1")
    return value


def _env_threads() -> int:
    raw = os.getenv("CLUSTERRESERVE_THREADS")
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clusterreserve",
        description="Conditional claim-payment predictions for Poisson cluster processes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("predict", "conditional mean and variance per conditioning value"),
        ("figure", "the six-panel predictor study as data files"),
        ("simulate", "Monte Carlo replicate summaries"),
        ("validate", "analytic engines against identities and simulation"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--output", default=None,
                       help="output file ('-' for stdout); a directory for figure")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--seed", type=_seed, default=None, help="overrides mc.seed")
        p.add_argument("--threads", type=_threads, default=None)
        p.add_argument("--log-level", default=None, choices=("DEBUG", "INFO", "WARNING", "ERROR"))
        if name == "figure":
            p.add_argument("--spot-check", action="store_true",
                           help="compare central points with the semi-analytic oracle (needs mc)")
    return parser


def _configure_logging(flag: Optional[str], configured: Optional[str]) -> None:
    level = flag or os.getenv("CLUSTERRESERVE_LOG_LEVEL") or configured or "WARNING"
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


# ============================================================
# Main
# ============================================================

def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)

    try:
        run = with_seed(load_config(args.config), args.seed)
    except ConfigError as e:
        _configure_logging(args.log_level, None)
        logger.error("%s", e)
        return EXIT_CONFIG

    _configure_logging(args.log_level, run.log_level)
    threads = args.threads or _env_threads()

    try:
        if args.command == "predict":
            frame, explanation = cmd_predict(run)
            emit(frame, args.output, args.format, command="predict",
                 inputs=run_inputs(run), explanation=explanation)

        elif args.command == "figure":
            panels = cmd_figure(run, spot_check=args.spot_check, threads=threads)
            manifest = write_figure(panels, args.output or DEFAULT_FIGURE_DIR, args.format)
            logger.info("figure manifest written to %s", manifest)
            failed = [c for p in panels for c in p.spot_checks if not c["passed"]]
            if failed:
                logger.warning("%d figure spot checks failed", len(failed))
                return EXIT_VALIDATION

        elif args.command == "simulate":
            frame, explanation = cmd_simulate(run, threads=threads)
            emit(frame, args.output, args.format, command="simulate",
                 inputs=run_inputs(run, threads=threads), explanation=explanation)

        elif args.command == "validate":
            frame, passed = cmd_validate(run, threads=threads)
            emit(frame, args.output, args.format, command="validate",
                 inputs=run_inputs(run),
                 explanation=f"{int(frame['passed'].sum())} of {len(frame)} checks passed; "
                             f"largest |z| {worst_z(frame):.2f}.")
            if not passed:
                return EXIT_VALIDATION

    except ConfigError as e:
        logger.error("%s", e)
        return EXIT_CONFIG
    except ClusterReserveError as e:
        logger.error("%s: %s", type(e).__name__, e)
        logger.debug(traceback.format_exc())
        return EXIT_NUMERICAL

    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
