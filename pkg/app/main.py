"""
Command-line entry point.
"""

import sys
from typing import List, Optional

import structlog
from pydantic import ValidationError

from app.cli.router import build_parser
from app.core.config import settings
from app.core.exceptions import ConfigError, StageFailure, StyleforgeError
from app.core.logging import setup_logging

logger = structlog.get_logger(__name__)


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parse arguments, run the command and map errors to exit codes.

    Returns:
        0 on success, 2 on configuration or usage errors, 3 when a stage fails
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    logger.debug("Starting styleforge", version=settings.APP_VERSION, command=args.command)

    try:
        return int(args.func(args))
    except StageFailure as exc:
        logger.error("Stage failed", stage=exc.stage, error=str(exc.cause), manifest=exc.manifest_path)
        return exc.exit_code
    except StyleforgeError as exc:
        logger.error(exc.detail, **{k: str(v) for k, v in exc.context.items()})
        return exc.exit_code
    except ValidationError as exc:
        logger.error("Invalid data", error=str(exc))
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
