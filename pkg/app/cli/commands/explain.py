"""
``styleforge explain``: attention enrichment and integrated gradients.
"""

import argparse

from app.cli.deps import get_config, update_section
from app.services.pipeline import EXPLANATIONS, explain_stage


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("explain", help="Explain generator and classifier")
    parser.add_argument("analysis", choices=list(EXPLANATIONS) + ["all"])
    parser.add_argument("--model", help="Generator checkpoint (ae, ig-gen) or classifier checkpoint (ig-cls)")
    parser.add_argument("--input", help="Corpus directory or corpus.jsonl")
    parser.add_argument("--steps", type=int)
    parser.set_defaults(func=run)


def run(args: argparse.Namespace) -> int:
    config = get_config(args)
    config = update_section(config, "explain", steps=args.steps)
    analyses = EXPLANATIONS if args.analysis == "all" else (args.analysis,)
    generator_dir = detector_dir = None
    if args.model:
        if args.analysis == "ig-cls":
            detector_dir = args.model
        elif args.analysis != "all":
            generator_dir = args.model
    explain_stage(
        config,
        corpus_path=args.input,
        generator_dir=generator_dir,
        detector_dir=detector_dir,
        analyses=analyses,
    )
    return 0
