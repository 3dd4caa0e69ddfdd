"""
``styleforge corpus``: raw documents to a tagged, split sentence corpus.
"""

import argparse

import structlog

from app.cli.deps import get_config, update_section
from app.services.pipeline import corpus_stage

logger = structlog.get_logger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("corpus", help="Build the sentence corpus")
    parser.add_argument("--input", help="Folder with one sub-folder of .txt files per author")
    parser.add_argument("--scheme", help="Tag scheme file (JSON or YAML)")
    parser.add_argument("--parses", help="Parse sidecar (JSON lines of text and parse)")
    parser.add_argument("--test-fraction", type=float)
    parser.set_defaults(func=run)


def run(args: argparse.Namespace) -> int:
    config = get_config(args, input_dir=args.input)
    config = update_section(
        config, "corpus", scheme=args.scheme, parses=args.parses, test_fraction=args.test_fraction
    )
    manifest = corpus_stage(config)
    logger.info("Corpus ready", outputs=sorted(manifest.output_hashes))
    return 0
