"""
Generation schemas: seeds, sampling configuration and generated sentence sets.
"""

from typing import Any, Dict, List, Literal, Optional

from pydantic import ConfigDict, Field

from app.schemas.base import BaseSchema

RejectionReason = Literal["incomplete", "empty_after_strip", "contains_tag"]


class Seed(BaseSchema):
    """Author tag optionally followed by a few words."""
    author: int = Field(..., ge=0)
    extra_tokens: List[str] = Field(default_factory=list)

    def render(self, tag: str) -> str:
        return " ".join([tag, *self.extra_tokens])


class GenerationConfig(BaseSchema):
    """Sampling setup. Defaults: temperature 0.9, 64 new tokens, sampling on."""
    temperature: float = Field(0.9, gt=0.0)
    max_new_tokens: int = Field(64, ge=1)
    sample: bool = True
    rng_seed: int = 0
    retain_trace: bool = False


class RawGeneration(BaseSchema):
    """Decoded model output before post-processing."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    seed: Seed
    token_ids: List[int]
    prompt_len: int = Field(..., ge=1)
    text: str
    stopped_on_end_tag: bool = False
    trace: Optional[Any] = Field(default=None, exclude=True)

    @property
    def generated_ids(self) -> List[int]:
        return self.token_ids[self.prompt_len:]


class PostprocessOutcome(BaseSchema):
    """Either a clean sentence or the reason it was rejected."""
    sentence: Optional[str] = None
    rejection: Optional[RejectionReason] = None

    @property
    def accepted(self) -> bool:
        return self.sentence is not None


class GeneratedItem(BaseSchema):
    """One accepted sentence as written to ``generated.jsonl``."""
    seed: Seed
    author: int
    method: str
    text: str
    retry_count: int = Field(0, ge=0)


class AuthorGenerationStats(BaseSchema):
    requested: int
    accepted: int
    attempts: int
    rejections: Dict[str, int] = Field(default_factory=dict)

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.attempts if self.attempts else 0.0


class GeneratedSet(BaseSchema):
    """Accepted sentences of one generation run."""
    items: List[GeneratedItem] = Field(default_factory=list)
    method: str
    per_author_counts: Dict[int, int] = Field(default_factory=dict)
    stats: Dict[int, AuthorGenerationStats] = Field(default_factory=dict)
    complete: bool = True


class SeedVocabulary(BaseSchema):
    """Frequent sentence openers used to extend tag-only seeds."""
    first_words: List[str]
    openers: List[List[str]] = Field(default_factory=list)
