"""
Pipeline configuration and run manifests.
"""

from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import yaml
from pydantic import Field, ValidationError

from app.core.exceptions import ConfigError
from app.schemas.base import BaseSchema
from app.schemas.modeling import DetectorHyper, FineTuneMethod, ReferenceModelConfig, TrainingHyper

StageName = Literal["corpus", "finetune", "generate", "evaluate", "synfeat", "explain"]
STAGE_ORDER: List[str] = ["corpus", "finetune", "generate", "evaluate", "synfeat", "explain"]


class BoundaryMarkers(BaseSchema):
    start: str
    end: str


class CorpusStageConfig(BaseSchema):
    input_dir: str
    scheme: Optional[str] = None
    parses: Optional[str] = None
    test_fraction: float = Field(0.20, gt=0.0, lt=1.0)
    min_words: int = Field(3, ge=1)
    max_words: int = Field(128, ge=1)
    strict_markers: bool = False
    markers: Optional[List[BoundaryMarkers]] = None


class FineTuneStageConfig(TrainingHyper):
    methods: List[FineTuneMethod] = Field(default_factory=lambda: ["fft", "lora"])


class DetectorStageConfig(DetectorHyper):
    pass


class GenerateStageConfig(BaseSchema):
    per_author: int = Field(5000, ge=1)
    temperature: float = Field(0.9, gt=0.0)
    max_new_tokens: int = Field(64, ge=1)
    sample: bool = True
    seed_vocabulary_size: int = Field(500, ge=1)
    retry_factor: int = Field(10, ge=1)


class EvaluateStageConfig(BaseSchema):
    threshold: float = Field(0.93, ge=0.0, le=1.0)


class SynfeatStageConfig(BaseSchema):
    features: Union[Literal["all"], List[str]] = "all"
    bins: int = Field(20, ge=1)
    generated_parses: Optional[str] = None


class ExplainStageConfig(BaseSchema):
    steps: int = Field(64, ge=1)
    ae_generations: int = Field(100, ge=1)
    ig_generations: int = Field(5, ge=1)
    ig_sentences: int = Field(200, ge=1)
    top_k: int = Field(20, ge=1)
    method: FineTuneMethod = "fft"


class PipelineConfig(BaseSchema):
    """Single declarative file with one section per stage."""
    seed: int = 0
    out_dir: str = "runs/default"
    backend: Optional[str] = None
    corpus: CorpusStageConfig
    model: ReferenceModelConfig = Field(default_factory=ReferenceModelConfig)
    finetune: FineTuneStageConfig = Field(default_factory=FineTuneStageConfig)
    detector: DetectorStageConfig = Field(default_factory=DetectorStageConfig)
    generate: GenerateStageConfig = Field(default_factory=GenerateStageConfig)
    evaluate: EvaluateStageConfig = Field(default_factory=EvaluateStageConfig)
    synfeat: SynfeatStageConfig = Field(default_factory=SynfeatStageConfig)
    explain: ExplainStageConfig = Field(default_factory=ExplainStageConfig)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "PipelineConfig":
        """Read and validate a YAML pipeline file; relative paths resolve against its folder."""
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigError("config file not found", path=str(config_path))
        try:
            data = yaml.safe_load(config_path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError("config file does not parse", path=str(config_path), error=str(exc))
        try:
            config = cls.model_validate(data)
        except ValidationError as exc:
            raise ConfigError("config file is invalid", path=str(config_path), error=str(exc))
        return config.resolve_paths(config_path.parent)

    def resolve_paths(self, base: Path) -> "PipelineConfig":
        def _resolve(value: Optional[str]) -> Optional[str]:
            if value is None or Path(value).is_absolute():
                return value
            return str((base / value).resolve())

        corpus = self.corpus.model_copy(update={
            "input_dir": _resolve(self.corpus.input_dir),
            "scheme": _resolve(self.corpus.scheme),
            "parses": _resolve(self.corpus.parses),
        })
        synfeat = self.synfeat.model_copy(
            update={"generated_parses": _resolve(self.synfeat.generated_parses)}
        )
        return self.model_copy(update={
            "out_dir": _resolve(self.out_dir),
            "corpus": corpus,
            "synfeat": synfeat,
        })


class RunManifest(BaseSchema):
    """What one stage consumed and produced."""
    stage: str
    config: Dict[str, Any] = Field(default_factory=dict)
    input_hashes: Dict[str, str] = Field(default_factory=dict)
    output_hashes: Dict[str, str] = Field(default_factory=dict)
    wall_time_s: float = 0.0
    backend: str
    rng_seeds: Dict[str, int] = Field(default_factory=dict)
    deterministic: bool = True
    status: Literal["ok", "failed"] = "ok"
    error: Optional[str] = None
