"""
Detector evaluation schemas.
"""

from typing import Dict, List, Optional

from pydantic import Field, model_validator

from app.schemas.base import BaseSchema


class Prediction(BaseSchema):
    """Classifier output for one sentence."""
    sentence_id: str
    probs: List[float]
    predicted: int
    confidence: float = Field(..., ge=0.0, le=1.0)
    expected: int
    text: Optional[str] = None

    @property
    def correct(self) -> bool:
        return self.predicted == self.expected


class AgreementMatrix(BaseSchema):
    """Rows are expected (seed tag) authors, columns are predicted authors."""
    counts: List[List[int]]
    labels: List[str] = Field(default_factory=list)
    total: int = 0
    agreement_rate: Optional[float] = None
    binomial_pvalue: Optional[float] = None

    @model_validator(mode="after")
    def _non_negative(self) -> "AgreementMatrix":
        if any(value < 0 for row in self.counts for value in row):
            raise ValueError("agreement counts must be non-negative")
        return self

    @property
    def row_sums(self) -> List[int]:
        return [sum(row) for row in self.counts]

    @property
    def diagonal(self) -> int:
        return sum(self.counts[i][i] for i in range(len(self.counts)))


class AuthorFilterStats(BaseSchema):
    retained: int
    total: int
    avg_confidence: Optional[float] = None
    avg_accuracy: Optional[float] = None


class FilteredReport(BaseSchema):
    """Confidence-filtered agreement; averages are micro averages over retained predictions."""
    threshold: float = Field(..., ge=0.0, le=1.0)
    retained: int
    total: int
    retained_fraction: Optional[float] = None
    avg_confidence: Optional[float] = None
    avg_accuracy: Optional[float] = None
    undefined: bool = False
    per_author: Dict[int, AuthorFilterStats] = Field(default_factory=dict)


class ClassificationSummary(BaseSchema):
    """Accuracy, macro-F1 and confusion counts over a labelled prediction list."""
    accuracy: float
    macro_f1: float
    confusion: List[List[int]]
    total: int


class ThresholdPoint(BaseSchema):
    threshold: float
    retained: int
    avg_confidence: Optional[float] = None
    avg_accuracy: Optional[float] = None
