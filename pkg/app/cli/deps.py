"""
Shared command dependencies: configuration resolved from global flags.
"""

import argparse
from typing import Any, Dict, Optional

from pydantic import ValidationError

from app.core.exceptions import ConfigError
from app.schemas import CorpusStageConfig, PipelineConfig


def get_config(args: argparse.Namespace, input_dir: Optional[str] = None) -> PipelineConfig:
    """
    Pipeline configuration from ``--config`` (or defaults) with the global flags applied.

    Without a config file the corpus section needs ``input_dir``; commands that never
    read raw documents pass a placeholder.
    """
    if args.config:
        config = PipelineConfig.load(args.config)
    else:
        config = PipelineConfig(corpus=CorpusStageConfig(input_dir=input_dir or "."))
    overrides: Dict[str, Any] = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.backend is not None:
        overrides["backend"] = args.backend
    if args.out is not None:
        overrides["out_dir"] = args.out
    if input_dir is not None:
        overrides["corpus"] = config.corpus.model_copy(update={"input_dir": input_dir})
    return config.model_copy(update=overrides) if overrides else config


def update_section(config: PipelineConfig, name: str, **values: Any) -> PipelineConfig:
    """Copy of ``config`` with the non-None ``values`` set on one section."""
    changes = {key: value for key, value in values.items() if value is not None}
    if not changes:
        return config
    current = getattr(config, name)
    try:
        section = type(current).model_validate({**current.model_dump(), **changes})
    except ValidationError as exc:
        raise ConfigError("invalid option", section=name, error=str(exc))
    return config.model_copy(update={name: section})
