"""
``styleforge finetune``: generator fine-tuning and/or detector training.
"""

import argparse

from app.cli.deps import get_config, update_section
from app.services.pipeline import finetune_stage

TARGETS = {"generator": ("generator",), "detector": ("detector",), "all": ("generator", "detector")}


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("finetune", help="Train generators and the style classifier")
    parser.add_argument("--target", choices=sorted(TARGETS), default="all")
    parser.add_argument("--corpus", help="Corpus directory or corpus.jsonl")
    parser.add_argument("--method", choices=["fft", "lora"], action="append", help="Repeat for both")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--max-steps", type=int)
    parser.set_defaults(func=run)


def run(args: argparse.Namespace) -> int:
    config = get_config(args)
    config = update_section(config, "finetune", methods=args.method, epochs=args.epochs, max_steps=args.max_steps)
    finetune_stage(config, corpus_path=args.corpus, targets=TARGETS[args.target])
    return 0
