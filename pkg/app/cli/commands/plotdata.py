"""
``styleforge plotdata``: CSV files behind the figures and tables.
"""

import argparse
from pathlib import Path

import structlog

from app.services.plotdata import PLOT_KINDS, emit_plot_data

logger = structlog.get_logger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("plotdata", help=f"Emit plot data: {', '.join(PLOT_KINDS)}")
    parser.add_argument("kind")
    parser.add_argument("--report", required=True, help="Stage report to convert")
    parser.set_defaults(func=run)


def run(args: argparse.Namespace) -> int:
    out_dir = Path(args.out or ".") / "plotdata"
    for path in emit_plot_data(args.report, args.kind, out_dir):
        print(path)
    return 0
