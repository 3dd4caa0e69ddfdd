"""
``styleforge synfeat``: syntactic feature histograms and divergences.
"""

import argparse

from app.cli.deps import get_config, update_section
from app.services.pipeline import synfeat_stage


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("synfeat", help="Compare real and generated syntax")
    parser.add_argument("--real", help="Corpus directory or corpus.jsonl")
    parser.add_argument("--generated", action="append", help="generated_<method>.jsonl; repeatable")
    parser.add_argument("--features", help="'all' or a comma-separated list")
    parser.add_argument("--bins", type=int)
    parser.add_argument("--generated-parses", help="Parse sidecar for generated sentences")
    parser.set_defaults(func=run)


def run(args: argparse.Namespace) -> int:
    config = get_config(args)
    features = None
    if args.features:
        features = "all" if args.features == "all" else [f.strip() for f in args.features.split(",") if f.strip()]
    config = update_section(
        config, "synfeat", features=features, bins=args.bins, generated_parses=args.generated_parses
    )
    synfeat_stage(config, corpus_path=args.real, generated_files=args.generated)
    return 0
