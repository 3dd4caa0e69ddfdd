"""
Syntactic-feature and explanation schemas.
"""

import math
from typing import Dict, List, Literal, Optional

from pydantic import Field, field_validator, model_validator

from app.schemas.base import BaseSchema

Population = Literal["real", "generated"]


class FeatureVector(BaseSchema):
    """Registry features for one sentence; absent features are listed, not zero-filled."""
    sentence_id: str
    author: int
    values: Dict[str, float]
    absent: List[str] = Field(default_factory=list)

    @field_validator("values")
    @classmethod
    def _finite(cls, values: Dict[str, float]) -> Dict[str, float]:
        for name, value in values.items():
            if not math.isfinite(value):
                raise ValueError(f"feature {name} is not finite")
        return values


class Histogram(BaseSchema):
    feature: str
    edges: List[float]
    counts: List[int]
    population: Population
    author: Optional[int] = None

    @model_validator(mode="after")
    def _shape(self) -> "Histogram":
        if len(self.edges) != len(self.counts) + 1:
            raise ValueError("histogram needs len(counts) + 1 edges")
        if any(b <= a for a, b in zip(self.edges, self.edges[1:])):
            raise ValueError("histogram edges must be strictly increasing")
        return self

    @property
    def size(self) -> int:
        return sum(self.counts)


class FeatureComparison(BaseSchema):
    feature: str
    author: Optional[int] = None
    real: Histogram
    generated: Histogram
    divergence: float


class TagSpan(BaseSchema):
    """Half-open token range of the author tag."""
    start: int = Field(..., ge=0)
    end: int = Field(..., ge=1)

    @model_validator(mode="after")
    def _ordered(self) -> "TagSpan":
        if self.end <= self.start:
            raise ValueError("tag span must contain at least one token")
        return self

    @property
    def tag_len(self) -> int:
        return self.end - self.start


class LayerEnrichment(BaseSchema):
    layer: int
    to_tag_mass: float = Field(..., ge=0.0)
    enrichment: float = Field(..., ge=0.0)


class EnrichmentProfile(BaseSchema):
    """Per-layer to-tag mass and enrichment.

    Every layer satisfies ``enrichment == to_tag_mass * T / tag_len``. Averaged profiles
    carry the mean mass, the mean ``T`` and ``sample_size``; their enrichment is derived
    from those means.
    """
    layers: List[LayerEnrichment]
    T: float
    tag_len: int
    sample_size: int = 1
    tag: Optional[str] = None


class AttributionMatrix(BaseSchema):
    """A[i][j]: importance of prompt token i for generated token j."""
    A: List[List[float]]
    prompt_tokens: List[str] = Field(default_factory=list)
    generated_tokens: List[str] = Field(default_factory=list)
    steps: int
    completeness_gap: List[float] = Field(default_factory=list)
    author: Optional[int] = None

    @property
    def shape(self) -> tuple:
        return (len(self.A), len(self.A[0]) if self.A else 0)


class TokenRankEntry(BaseSchema):
    token: str
    mean_attribution: float
    mean_magnitude: float
    support: int = Field(..., ge=1)


class TokenRanking(BaseSchema):
    """Tokens ordered by |mean signed attribution|, largest first."""
    author: int
    entries: List[TokenRankEntry]
    sentences: int
