"""
``styleforge evaluate``: classify real and generated sentences.
"""

import argparse

from app.cli.deps import get_config, update_section
from app.services.pipeline import evaluate_stage


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("evaluate", help="Agreement and confidence filtering")
    parser.add_argument("--detector", help="Classifier checkpoint directory")
    parser.add_argument("--corpus", help="Corpus directory or corpus.jsonl")
    parser.add_argument("--generated", action="append", help="generated_<method>.jsonl; repeatable")
    parser.add_argument("--threshold", type=float)
    parser.set_defaults(func=run)


def run(args: argparse.Namespace) -> int:
    config = get_config(args)
    config = update_section(config, "evaluate", threshold=args.threshold)
    generated = args.generated
    if generated is None and args.corpus:
        # an explicit corpus without generated files evaluates the real test split only
        generated = []
    evaluate_stage(config, corpus_path=args.corpus, detector_dir=args.detector, generated_files=generated)
    return 0
