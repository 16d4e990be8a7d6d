"""Command-line entry point: gen-data, train, eval, sweep, plot."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from .config import ConfigError, RunConfig, load_run_config
from .data import DataContractError, DataFormatError
from .engine import PROTOCOLS, DerlEngine, DerlEngineError
from .mlcr import ContractError
from .serialization import ConfigMismatchError, ModelFormatError
from .sweep import AXES, SweepError, worker_count
from .training import TrainingDivergedError
from .utils.logging import setup_logging

logger = logging.getLogger("derl_core.cli")

# Failures reported as a one-line error with exit status 1.
HANDLED = (
    ConfigError,
    ConfigMismatchError,
    ContractError,
    DataContractError,
    DataFormatError,
    DerlEngineError,
    ModelFormatError,
    SweepError,
    TrainingDivergedError,
    FileNotFoundError,
)


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="INI file with [data]/[model]/[train]/[eval]/[sweep] sections")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    parser.add_argument("--out", type=Path, default=Path("derl_out"), help="output directory")
    parser.add_argument("--seed", type=int, help="seed (data.seed for gen-data, train.seed otherwise)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="derl", description="Missing-modality robust multimodal sentiment engine.")
    parser.add_argument("--log-level", help="overrides DERL_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="write a synthetic dataset")
    _common(gen)

    tr = sub.add_parser("train", help="train a model and write model.bin + history.csv")
    _common(tr)
    tr.add_argument("--resume", type=Path, help="model file to continue from (config hash must match)")

    ev = sub.add_parser("eval", help="run an evaluation protocol")
    _common(ev)
    ev.add_argument("--protocol", choices=PROTOCOLS, default="intra")
    ev.add_argument("--model", type=Path, help="model file (intra and inter protocols)")

    sw = sub.add_parser("sweep", help="train and evaluate over a grid axis")
    _common(sw)
    sw.add_argument("--axis", choices=AXES, required=True)

    pl = sub.add_parser("plot", help="re-render SVG figures from report CSVs")
    _common(pl)
    pl.add_argument("--source", type=Path, help="directory holding report CSVs (defaults to --out)")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_run_config(args.config, args.overrides)
    if args.seed is not None:
        if args.command == "gen-data":
            config.data.seed = args.seed
        else:
            config.train.seed = args.seed
    return config


def _explicit_model_config(args: argparse.Namespace) -> bool:
    return args.config is not None or any(o.strip().startswith("model.") for o in args.overrides)


def run(args: argparse.Namespace, engine: DerlEngine) -> dict | list:
    config = resolve_config(args)
    if args.command == "gen-data":
        manifest = engine.gen_data(config, args.out)
        return {
            "manifest": str(manifest),
            "entries": engine.dataset_info(manifest),
            "planted_cosines": engine.planted_cosines(manifest),
        }
    if args.command == "train":
        return engine.train(config, args.out, resume=args.resume)
    if args.command == "eval":
        result = engine.evaluate(
            config, args.protocol, args.out, model_path=args.model, check_config=_explicit_model_config(args)
        )
        return {"protocol": result["protocol"], "files": result["files"]}
    if args.command == "sweep":
        return engine.sweep(config, args.axis, args.out)
    config.write_snapshot(args.out)
    return [str(p) for p in engine.plot(args.source or args.out, args.out)]


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    engine = DerlEngine(home=Path.cwd(), workers=worker_count())
    try:
        result = run(args, engine)
    except HANDLED as exc:
        logger.error("%s failed: %s", args.command, exc)
        return 1
    json.dump(result, sys.stdout, indent=2, default=str)
    sys.stdout.write("\n")
    return 0


def entrypoint(argv: Optional[List[str]] = None) -> None:
    sys.exit(main(argv))


if __name__ == "__main__":
    entrypoint()
