"""``kd-da`` command line: train a teacher, distill, measure, rank augmentations, check the gap lab."""
from __future__ import annotations

import argparse
import logging
import sys
from typing import Any, Dict, List, Optional, Sequence

from . import experiment
from .config import ExperimentConfig, build_experiment_config, load_config, parse_set_option, set_path

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_CHECK_FAILED = 2

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config document; missing keys keep their defaults")
    parser.add_argument("--seed", type=int, help="run a single seed instead of the configured seed list")
    parser.add_argument("--out", help="output directory (overrides output_dir)")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY.PATH=VALUE",
        help="override one config key; VALUE is parsed as JSON when possible",
    )
    noise = parser.add_mutually_exclusive_group()
    noise.add_argument("-v", "--verbose", action="store_true", help="log at DEBUG level")
    noise.add_argument("-q", "--quiet", action="store_true", help="log warnings and errors only")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kd-da",
        description="Rank data augmentation schemes for knowledge distillation by teacher output stddev.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-teacher", help="train the teacher with cross-entropy and save its checkpoint")
    _add_common(p)

    p = sub.add_parser("distill", help="distill one student per seed with one augmentation scheme")
    _add_common(p)
    p.add_argument("--scheme", help="scheme name (default: distill.scheme from the config)")

    p = sub.add_parser("tstddev", help="teacher stddev, v-bar and r-bar for the configured schemes")
    _add_common(p)

    p = sub.add_parser("rank-da", help="distill and measure every (scheme, seed); write ranking.csv/json")
    _add_common(p)

    p = sub.add_parser("prop-check", help="gap moments under correlated sampling; exit 2 if a check fails")
    _add_common(p)

    p = sub.add_parser("correlate", help="Pearson correlation between two columns of a ranking CSV")
    _add_common(p)
    p.add_argument("csv", help="ranking CSV written by rank-da")
    p.add_argument("--x", default="t_stddev", help="first column (default: t_stddev)")
    p.add_argument("--y", default="student_test_loss", help="second column (default: student_test_loss)")
    return parser


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    """Config file, then ``--set`` overrides, then ``--seed`` / ``--out``."""
    params: Dict[str, Any] = {}
    for option in args.overrides:
        key, value = parse_set_option(option)
        set_path(params, key, value)
    if args.seed is not None:
        params["seeds"] = [args.seed]
    if args.out is not None:
        params["output_dir"] = args.out
    if args.config:
        return load_config(args.config, **params)
    return build_experiment_config(params)


def _dispatch(args: argparse.Namespace) -> int:
    cfg = config_from_args(args)
    command = args.command
    if command == "train-teacher":
        experiment.run_train_teacher(cfg)
    elif command == "distill":
        experiment.run_distill(cfg, args.scheme)
    elif command == "tstddev":
        experiment.run_tstddev(cfg)
    elif command == "rank-da":
        summary = experiment.run_rank_da(cfg)
        corr = summary["pearson_t_stddev_vs_test_loss"]
        logger.info("t_stddev vs student test loss: r=%s p=%s", corr.get("r"), corr.get("p_value"))
    elif command == "prop-check":
        check = experiment.run_prop_check(cfg)
        if not check.ok:
            for msg in check.failures:
                print(f"prop-check failed: {msg}", file=sys.stderr)
            return EXIT_CHECK_FAILED
    elif command == "correlate":
        experiment.run_correlate(args.csv, cfg.output_dir, args.x, args.y)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(list(argv) if argv is not None else None)
    configure_logging(args.verbose, args.quiet)
    try:
        return _dispatch(args)
    except (ValueError, OSError) as exc:
        print(f"kd-da {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


__all__: List[str] = ["main", "build_parser", "config_from_args", "configure_logging"]
