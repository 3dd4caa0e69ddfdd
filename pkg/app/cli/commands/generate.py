"""
``styleforge generate``: seeded generation from fine-tuned checkpoints.
"""

import argparse

from app.cli.deps import get_config, update_section
from app.services.pipeline import generate_stage


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("generate", help="Generate sentences per author")
    parser.add_argument("--corpus", help="Corpus directory or corpus.jsonl (seed vocabulary)")
    parser.add_argument("--models", help="Folder holding one checkpoint per method")
    parser.add_argument("--method", choices=["fft", "lora"], action="append")
    parser.add_argument("--per-author", type=int)
    parser.add_argument("--temperature", type=float)
    parser.set_defaults(func=run)


def run(args: argparse.Namespace) -> int:
    config = get_config(args)
    config = update_section(config, "generate", per_author=args.per_author, temperature=args.temperature)
    generate_stage(config, corpus_path=args.corpus, models_dir=args.models, methods=args.method)
    return 0
