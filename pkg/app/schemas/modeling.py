"""
Model, training and checkpoint schemas.
"""

from typing import List, Literal, Optional

from pydantic import Field

from app.schemas.base import BaseSchema

ModelKind = Literal["causal_lm", "classifier"]
FineTuneMethod = Literal["fft", "lora"]
Objective = Literal["next_token", "class_label"]


class ReferenceModelConfig(BaseSchema):
    """Architecture of the built-in reference transformer."""
    layers: int = Field(4, ge=1)
    heads: int = Field(4, ge=1)
    embed_dim: int = Field(128, ge=1)
    vocab: int = Field(8000, ge=1)  # BPE target size; the built model uses the real size
    context: int = Field(192, ge=1)
    num_labels: int = Field(5, ge=1)
    dropout: float = Field(0.0, ge=0.0, lt=1.0)
    init_std: float = Field(0.02, gt=0.0)


class LoRASettings(BaseSchema):
    """Low-rank adapter placement and scale."""
    rank: int = Field(8, ge=1)
    alpha: float = Field(16.0, gt=0.0)
    targets: List[str] = Field(default_factory=lambda: ["q_proj", "v_proj"])


class TrainingHyper(BaseSchema):
    """Hyperparameters shared by generator fine-tuning and detector training."""
    epochs: int = Field(3, ge=1)
    batch_size: int = Field(32, ge=1)
    learning_rate: float = Field(5e-4, gt=0.0)
    weight_decay: float = Field(0.01, ge=0.0)
    max_grad_norm: float = Field(1.0, gt=0.0)
    max_steps: Optional[int] = Field(None, ge=1)
    seed: int = 0
    log_every: int = Field(10, ge=1)
    lora: LoRASettings = Field(default_factory=LoRASettings)
    # None: the backend's default_pretrain_epochs
    pretrain_epochs: Optional[int] = Field(None, ge=0)
    # class_label objective only
    label_smoothing: float = Field(0.0, ge=0.0, lt=1.0)


class DetectorHyper(TrainingHyper):
    """Classifier training defaults: nine epochs with early-stop patience three."""
    epochs: int = Field(9, ge=1)
    patience: int = Field(3, ge=1)
    learning_rate: float = Field(1e-3, gt=0.0)
    label_smoothing: float = Field(0.1, ge=0.0, lt=1.0)


class TrainingReport(BaseSchema):
    """Loss curve and bookkeeping of one training run."""
    method: str
    objective: Objective
    epochs: int = 0
    steps: int = 0
    loss_curve: List[float] = Field(default_factory=list)
    epoch_losses: List[float] = Field(default_factory=list)
    parameter_count: int = 0
    trainable_parameter_count: int = 0
    truncated_examples: int = 0
    base_pretrain_epochs: int = 0
    diverged: bool = False


class EpochMetrics(BaseSchema):
    epoch: int
    train_loss: float
    test_accuracy: float
    test_macro_f1: float


class DetectorReport(BaseSchema):
    """Per-epoch test metrics of the style classifier."""
    training: TrainingReport
    epochs: List[EpochMetrics] = Field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False


class CheckpointConfig(BaseSchema):
    """``config.json`` stored in every checkpoint directory."""
    backend: str
    kind: ModelKind
    method: str
    architecture: dict
    scheme_hash: Optional[str] = None
    scheme: Optional[dict] = None
    training: Optional[dict] = None
    lora: Optional[LoRASettings] = None
    base_model: Optional[str] = None
