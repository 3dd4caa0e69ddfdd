"""
Pydantic schemas for data contracts between stages.
"""

from app.schemas.analysis import (
    AttributionMatrix,
    EnrichmentProfile,
    FeatureComparison,
    FeatureVector,
    Histogram,
    LayerEnrichment,
    Population,
    TagSpan,
    TokenRankEntry,
    TokenRanking,
)
from app.schemas.base import BaseSchema
from app.schemas.corpus import (
    DEFAULT_AUTHORS,
    AuthorId,
    Corpus,
    CorpusManifest,
    SentenceRecord,
    Split,
    TagScheme,
    default_scheme,
)
from app.schemas.evaluation import (
    AgreementMatrix,
    AuthorFilterStats,
    ClassificationSummary,
    FilteredReport,
    Prediction,
    ThresholdPoint,
)
from app.schemas.generation import (
    AuthorGenerationStats,
    GeneratedItem,
    GeneratedSet,
    GenerationConfig,
    PostprocessOutcome,
    RawGeneration,
    RejectionReason,
    Seed,
    SeedVocabulary,
)
from app.schemas.modeling import (
    CheckpointConfig,
    DetectorHyper,
    DetectorReport,
    EpochMetrics,
    FineTuneMethod,
    LoRASettings,
    ModelKind,
    Objective,
    ReferenceModelConfig,
    TrainingHyper,
    TrainingReport,
)
from app.schemas.pipeline import (
    STAGE_ORDER,
    BoundaryMarkers,
    CorpusStageConfig,
    DetectorStageConfig,
    EvaluateStageConfig,
    ExplainStageConfig,
    FineTuneStageConfig,
    GenerateStageConfig,
    PipelineConfig,
    RunManifest,
    StageName,
    SynfeatStageConfig,
)

__all__ = [
    "AgreementMatrix",
    "AttributionMatrix",
    "AuthorFilterStats",
    "AuthorGenerationStats",
    "AuthorId",
    "BaseSchema",
    "BoundaryMarkers",
    "CheckpointConfig",
    "ClassificationSummary",
    "Corpus",
    "CorpusManifest",
    "CorpusStageConfig",
    "DEFAULT_AUTHORS",
    "DetectorHyper",
    "DetectorReport",
    "DetectorStageConfig",
    "EnrichmentProfile",
    "EpochMetrics",
    "EvaluateStageConfig",
    "ExplainStageConfig",
    "FeatureComparison",
    "FeatureVector",
    "FilteredReport",
    "FineTuneMethod",
    "FineTuneStageConfig",
    "GenerateStageConfig",
    "GeneratedItem",
    "GeneratedSet",
    "GenerationConfig",
    "Histogram",
    "LayerEnrichment",
    "LoRASettings",
    "ModelKind",
    "Objective",
    "PipelineConfig",
    "Population",
    "PostprocessOutcome",
    "Prediction",
    "RawGeneration",
    "ReferenceModelConfig",
    "RejectionReason",
    "RunManifest",
    "STAGE_ORDER",
    "Seed",
    "SeedVocabulary",
    "SentenceRecord",
    "Split",
    "StageName",
    "SynfeatStageConfig",
    "TagScheme",
    "TagSpan",
    "ThresholdPoint",
    "TokenRankEntry",
    "TokenRanking",
    "TrainingHyper",
    "TrainingReport",
    "default_scheme",
]
