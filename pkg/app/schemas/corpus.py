"""
Corpus schemas: authors, tag scheme, sentence records.
"""

import hashlib
import json
from collections import Counter
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

import yaml
from pydantic import Field, field_validator, model_validator

from app.schemas.base import BaseSchema

Split = Literal["train", "test"]

DEFAULT_AUTHORS = ("Dickens", "Austen", "Twain", "Alcott", "Melville")


class AuthorId(BaseSchema):
    """One author of the scheme."""
    index: int = Field(..., ge=0, le=4)
    name: str = Field(..., min_length=1)


class TagScheme(BaseSchema):
    """Bijection between authors and single-token tags, plus the end-of-sentence tag."""
    authors: List[AuthorId]
    author_tags: Dict[int, str]
    end_tag: str = Field(default="<end>", min_length=1)

    @model_validator(mode="after")
    def _check_bijection(self) -> "TagScheme":
        indices = [author.index for author in self.authors]
        if len(set(indices)) != len(indices):
            raise ValueError("author indices must be unique")
        if set(indices) != set(self.author_tags):
            raise ValueError("every author needs exactly one tag")
        tags = list(self.author_tags.values())
        if len(set(tags)) != len(tags):
            raise ValueError("author tags must be distinct")
        if self.end_tag in tags:
            raise ValueError("end tag must differ from every author tag")
        for tag in tags + [self.end_tag]:
            if not tag.strip() or any(ch.isspace() for ch in tag):
                raise ValueError(f"tag {tag!r} must be non-empty and contain no whitespace")
        return self

    @property
    def all_tags(self) -> List[str]:
        return [self.author_tags[a.index] for a in self.authors] + [self.end_tag]

    def tag_for(self, author: int) -> str:
        return self.author_tags[author]

    def author_for_tag(self, tag: str) -> Optional[int]:
        for index, candidate in self.author_tags.items():
            if candidate == tag:
                return index
        return None

    def name_of(self, author: int) -> str:
        for candidate in self.authors:
            if candidate.index == author:
                return candidate.name
        raise KeyError(author)

    def index_of(self, name: str) -> Optional[int]:
        lowered = name.strip().lower()
        for candidate in self.authors:
            if candidate.name.lower() == lowered or str(candidate.index) == lowered:
                return candidate.index
        return None

    @property
    def indices(self) -> List[int]:
        return sorted(author.index for author in self.authors)

    def scheme_hash(self) -> str:
        """Stable hash of the scheme, stored in checkpoints to detect mismatches."""
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    @classmethod
    def load(cls, path: Union[str, Path]) -> "TagScheme":
        """Load a scheme from a JSON or YAML file."""
        text = Path(path).read_text(encoding="utf-8")
        data = yaml.safe_load(text)
        return cls.model_validate(data)

    def dump(self, path: Union[str, Path]) -> None:
        Path(path).write_text(
            json.dumps(self.model_dump(mode="json"), indent=2, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )


def default_scheme() -> TagScheme:
    """Dickens=<0>, Austen=<1>, Twain=<2>, Alcott=<3>, Melville=<4>, end tag <end>."""
    authors = [AuthorId(index=i, name=name) for i, name in enumerate(DEFAULT_AUTHORS)]
    return TagScheme(
        authors=authors,
        author_tags={author.index: f"<{author.index}>" for author in authors},
        end_tag="<end>",
    )


class SentenceRecord(BaseSchema):
    """One cleaned sentence with author label and split assignment."""
    text: str = Field(..., min_length=1)
    author: int = Field(..., ge=0)
    split: Split = "train"
    source_doc: str
    parse: Optional[str] = None
    word_count: int = Field(..., ge=1)

    @field_validator("text")
    @classmethod
    def _text_not_blank(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("text must be non-empty after whitespace normalization")
        return value


class Corpus(BaseSchema):
    """Ordered sentence records plus the scheme and source provenance."""
    records: List[SentenceRecord]
    scheme: TagScheme
    provenance: Dict[str, str] = Field(default_factory=dict)
    rejections: Dict[str, int] = Field(default_factory=dict)

    def counts_by_author(self, split: Optional[Split] = None) -> Dict[int, int]:
        counts = Counter(r.author for r in self.records if split is None or r.split == split)
        return {index: counts.get(index, 0) for index in self.scheme.indices}

    def select(self, split: Optional[Split] = None, author: Optional[int] = None) -> List[SentenceRecord]:
        return [
            r for r in self.records
            if (split is None or r.split == split) and (author is None or r.author == author)
        ]


class CorpusManifest(BaseSchema):
    """Summary written next to ``corpus.jsonl``."""
    per_author: Dict[str, Dict[str, int]]
    rejections: Dict[str, int]
    provenance: Dict[str, str]
    records_sha256: str
    scheme_hash: str
    test_fraction: Optional[float] = None
    seed: Optional[int] = None
    total: int
