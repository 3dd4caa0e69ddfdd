"""
Main command router that registers all subcommands.
"""

import argparse

from app.cli.commands import corpus, evaluate, explain, finetune, generate, pipeline, plotdata, synfeat
from app.core.config import settings


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="styleforge",
        description="Author-conditioned generation, style detection and explanation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.APP_VERSION}")
    parser.add_argument("--config", help="Pipeline YAML file")
    parser.add_argument("--seed", type=int, help="Overrides the config seed")
    parser.add_argument("--backend", choices=["reference", "hf"], help="Overrides the config backend")
    parser.add_argument("--out", help="Output root; each stage writes <out>/<stage>/")
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")

    subparsers = parser.add_subparsers(dest="command", required=True)
    # Register all commands
    for command in (corpus, finetune, generate, evaluate, synfeat, explain, pipeline, plotdata):
        command.register(subparsers)
    return parser
