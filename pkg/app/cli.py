"""Command-line entry point for the trajectory embedding pipeline."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from app.mobility import __version__
from app.mobility.config import PipelineConfig, dump_flat_config, load_config
from app.mobility.errors import ConfigError, PipelineError
from app.mobility.experiments import EXPERIMENTS, run_experiments
from app.mobility.pipeline import STAGES, MobilityPipeline

logger = logging.getLogger("app.cli")

# CLI flag dest -> dotted config key.
_FLAG_KEYS = {
    "run_dir": "run_dir",
    "seed": "seed",
    "threads": "threads",
    "cdr": "cdr_path",
    "input": "infer_path",
    "delimiter": "parse.delimiter",
    "field_order": "parse.field_order",
    "header": "parse.header",
    "timezone": "parse.timezone",
    "period_start": "parse.period_start",
    "period_end": "parse.period_end",
    "seqscan_n": "seqscan.min_count",
    "min_support": "mining.min_support",
    "gap": "mining.gap",
    "max_pattern_length": "mining.max_pattern_length",
    "dim": "training.dim",
    "epochs": "training.epochs",
    "mode": "training.mode",
    "fusion": "training.fusion",
    "window": "training.window",
    "negatives": "training.negatives",
    "infer_epochs": "training.infer_epochs",
    "reducer": "reduction.kind",
    "n_neighbors": "reduction.n_neighbors",
    "min_dist": "reduction.min_dist",
    "reduce_epochs": "reduction.epochs",
    "sample": "evaluation.sample",
    "distance": "evaluation.distance",
    "n_sources": "evaluation.n_sources",
    "k_max": "evaluation.k_max",
    "users": "synth.n_users",
    "weeks": "synth.n_weeks",
    "locations": "synth.n_locations",
    "events_per_day": "synth.events_per_day",
    "noise_rate": "synth.noise_rate",
}


def _common_options() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    g = parent.add_argument_group("run")
    g.add_argument("--config", type=Path, help="Flat key-value config file (group.key = value)")
    g.add_argument("--run-dir", type=Path, help="Directory holding every stage's artifacts")
    g.add_argument("--seed", type=int)
    g.add_argument("--threads", type=int, help="Intra-stage threads; 1 keeps runs deterministic")
    g.add_argument("--force", action="store_true", help="Rerun stages even when their manifest matches")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="Any config override")
    g.add_argument("-v", "--verbose", action="store_true", help="Debug logging")

    g = parent.add_argument_group("input")
    g.add_argument("--cdr", type=Path, help="CDR text file (default: synthetic corpus of the run)")
    g.add_argument("--input", type=Path, help="CDR text file to place into a trained layout (infer)")
    g.add_argument("--delimiter")
    g.add_argument("--field-order", help="Comma-separated permutation of user_id,timestamp,location")
    g.add_argument("--header", action="store_const", const=True)
    g.add_argument("--timezone")
    g.add_argument("--period-start", help="First day of the observation period (YYYY-MM-DD)")
    g.add_argument("--period-end", help="Day after the observation period (YYYY-MM-DD)")

    g = parent.add_argument_group("segmentation")
    g.add_argument("--seqscan-n", type=int, help="Minimum occurrences of a relevant location (N)")
    g.add_argument("--seqscan-delta-minutes", type=float, help="Minimum presence of a relevant location")

    g = parent.add_argument_group("mining")
    g.add_argument("--min-support", type=float)
    g.add_argument("--gap", type=int)
    g.add_argument("--max-pattern-length", type=int)

    g = parent.add_argument_group("training")
    g.add_argument("--dim", type=int)
    g.add_argument("--epochs", type=int)
    g.add_argument("--mode", choices=["pv-dbow", "pv-dm"])
    g.add_argument("--fusion", choices=["sep", "sim"])
    g.add_argument("--window", type=int)
    g.add_argument("--negatives", type=int)
    g.add_argument("--infer-epochs", type=int)

    g = parent.add_argument_group("reduction")
    g.add_argument("--reducer", choices=["umap", "pca", "none"])
    g.add_argument("--n-neighbors", type=int)
    g.add_argument("--min-dist", type=float)
    g.add_argument("--reduce-epochs", type=int)

    g = parent.add_argument_group("evaluation")
    g.add_argument("--sample", type=int)
    g.add_argument("--distance", choices=["euclidean", "cosine"])
    g.add_argument("--n-sources", type=int)
    g.add_argument("--k-max", type=int)

    g = parent.add_argument_group("synthetic data")
    g.add_argument("--users", type=int)
    g.add_argument("--weeks", type=int)
    g.add_argument("--locations", type=int)
    g.add_argument("--events-per-day", type=float)
    g.add_argument("--noise-rate", type=float)
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mobemb",
        description="Embed symbolic mobility trajectories and evaluate the embedding.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parent = _common_options()
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in STAGES:
        sub.add_parser(stage, parents=[parent], help=f"Run the {stage} stage")
    sub.add_parser("all", parents=[parent], help="Run every stage up to the perturbation experiment")
    p = sub.add_parser("experiments", parents=[parent], help="Run ablation tables over an existing run")
    p.add_argument("--only", action="append", choices=EXPERIMENTS, help="Run only these experiments")
    sub.add_parser("show-config", parents=[parent], help="Print the resolved configuration")
    return parser


def overrides_from_args(args: argparse.Namespace) -> dict[str, Any]:
    """Map parsed flags to dotted config overrides; unset flags are left out."""
    overrides = {
        key: getattr(args, dest) for dest, key in _FLAG_KEYS.items() if getattr(args, dest, None) is not None
    }
    if args.seqscan_delta_minutes is not None:
        overrides["seqscan.delta_presence"] = args.seqscan_delta_minutes * 60.0
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        overrides[key] = value
    return overrides


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    return load_config(args.config, overrides_from_args(args))


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s | %(levelname)s | %(name)s | %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )

    try:
        config = resolve_config(args)
        if args.command == "show-config":
            sys.stdout.write(dump_flat_config(config))
            return 0
        pipeline = MobilityPipeline(config)
        if args.command == "all":
            results = pipeline.run(force=args.force)
        elif args.command == "experiments":
            paths = run_experiments(pipeline, args.only)
            results = [{"experiment": name, "report": str(path)} for name, path in paths.items()]
        else:
            results = [pipeline.run_stage(args.command, force=args.force)]
        for result in results:
            logger.info(json.dumps(result, sort_keys=True))
        return 0
    except PipelineError as e:
        code = getattr(e, "code", None)
        logger.error(f"{type(e).__name__}{f' [{code}]' if code else ''}: {e}")
        return e.exit_code
    except Exception as e:
        logger.exception(f"Unexpected failure: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
