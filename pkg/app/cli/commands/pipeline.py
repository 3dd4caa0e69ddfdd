"""
``styleforge pipeline``: every stage in dependency order.
"""

import argparse

from app.cli.deps import get_config
from app.schemas import STAGE_ORDER
from app.services.pipeline import run_pipeline


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("pipeline", help="Run all stages from one config file")
    parser.add_argument("--stages", help=f"Comma-separated subset of {','.join(STAGE_ORDER)}")
    parser.set_defaults(func=run)


def run(args: argparse.Namespace) -> int:
    config = get_config(args)
    stages = [s.strip() for s in args.stages.split(",")] if args.stages else None
    run_pipeline(config, stages)
    return 0
