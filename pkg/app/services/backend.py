"""
Model backend: handles, introspective forward passes, training steps and checkpoints.

Functions in this module work on any ``ModelHandle`` whose module follows the
``(input_ids | inputs_embeds, attention_mask, output_attentions) -> .logits/.attentions``
calling convention, which both the reference transformer and Hugging Face models do.
"""

import copy
import json
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
import structlog
import torch
from torch.nn import functional as F

from app.core.config import settings
from app.core.exceptions import ConfigError, ContextOverflowError, DivergenceError
from app.models.lora import apply_lora, count_parameters
from app.models.tokenizer import StyleTokenizer, extend_tokenizer
from app.models.transformer import ReferenceTransformer
from app.schemas.corpus import TagScheme
from app.schemas.modeling import (
    CheckpointConfig,
    LoRASettings,
    ModelKind,
    Objective,
    ReferenceModelConfig,
    TrainingHyper,
)

logger = structlog.get_logger(__name__)

CAPTURE_ALL: Set[str] = {"attentions", "embeddings", "logits"}
WEIGHTS_FILE = "weights.pt"
TOKENIZER_FILE = "tokenizer.json"
CONFIG_FILE = "config.json"


def resolve_device(name: Optional[str] = None) -> torch.device:
    name = name or settings.DEVICE
    if name == "auto":
        name = "cuda" if torch.cuda.is_available() else "cpu"
    return torch.device(name)


@dataclass
class ModelHandle:
    """A model plus everything needed to feed it and describe it."""
    kind: ModelKind
    module: torch.nn.Module
    tokenizer: Any
    scheme: Optional[TagScheme] = None
    method: str = "base"
    backend: str = "reference"
    architecture: Dict[str, Any] = field(default_factory=dict)
    lora: Optional[LoRASettings] = None
    pretrain_epochs: int = 0

    @property
    def device(self) -> torch.device:
        return next(self.module.parameters()).device

    @property
    def layer_count(self) -> int:
        return int(self.architecture["layers"])

    @property
    def head_count(self) -> int:
        return int(self.architecture["heads"])

    @property
    def embed_dim(self) -> int:
        return int(self.architecture["embed_dim"])

    @property
    def context(self) -> int:
        return int(self.architecture["context"])

    @property
    def parameter_count(self) -> int:
        return count_parameters(self.module)[0]

    @property
    def trainable_parameter_count(self) -> int:
        return count_parameters(self.module)[1]

    def embed(self, token_ids: Sequence[int]) -> torch.Tensor:
        """Token embeddings [T, C] for one sequence (no positional part)."""
        ids = torch.tensor([list(token_ids)], dtype=torch.long, device=self.device)
        return self.module.get_input_embeddings()(ids)[0]


@dataclass
class ForwardTrace:
    """
    Tensors captured from one forward pass over a single sequence.

    ``attentions`` is [layers, heads, T, T]; ``embeddings`` is [T, C]; ``logits`` is
    [T, vocab] for causal models and [num_labels] for classifiers.
    """
    token_ids: List[int]
    T: int
    attentions: Optional[np.ndarray] = None
    embeddings: Optional[np.ndarray] = None
    logits: Optional[np.ndarray] = None


@dataclass
class Batch:
    input_ids: torch.Tensor
    attention_mask: torch.Tensor
    labels: Optional[torch.Tensor] = None


def make_batch(
    sequences: Sequence[Sequence[int]],
    pad_id: int,
    labels: Optional[Sequence[int]] = None,
    device: Optional[torch.device] = None,
) -> Batch:
    """Right-pad token id lists into one batch."""
    width = max(len(seq) for seq in sequences)
    input_ids = torch.full((len(sequences), width), pad_id, dtype=torch.long)
    attention_mask = torch.zeros((len(sequences), width), dtype=torch.long)
    for row, seq in enumerate(sequences):
        input_ids[row, : len(seq)] = torch.tensor(list(seq), dtype=torch.long)
        attention_mask[row, : len(seq)] = 1
    label_tensor = torch.tensor(list(labels), dtype=torch.long) if labels is not None else None
    if device is not None:
        input_ids = input_ids.to(device)
        attention_mask = attention_mask.to(device)
        label_tensor = label_tensor.to(device) if label_tensor is not None else None
    return Batch(input_ids=input_ids, attention_mask=attention_mask, labels=label_tensor)


def forward(
    handle: ModelHandle,
    token_ids: Sequence[int],
    capture: Iterable[str] = ("attentions", "embeddings", "logits"),
) -> ForwardTrace:
    """
    Run one sequence through the model in inference mode and keep the requested tensors.

    Args:
        handle: Model to run
        token_ids: Sequence of at least one token
        capture: Any of ``attentions``, ``embeddings``, ``logits``

    Returns:
        ForwardTrace with the requested tensors as float numpy arrays

    Raises:
        ContextOverflowError: the sequence is longer than the model context
    """
    wanted = set(capture)
    unknown = wanted - CAPTURE_ALL
    if unknown:
        raise ValueError(f"unknown capture targets: {sorted(unknown)}")
    token_ids = list(token_ids)
    if not token_ids:
        raise ValueError("token_ids must contain at least one token")
    if len(token_ids) > handle.context:
        raise ContextOverflowError(length=len(token_ids), context=handle.context)

    handle.module.eval()
    with torch.no_grad():
        embeds = handle.embed(token_ids)
        mask = torch.ones((1, len(token_ids)), dtype=torch.long, device=handle.device)
        # attentions are always computed so that capture never changes the logits path
        out = handle.module(
            inputs_embeds=embeds[None], attention_mask=mask, output_attentions=True
        )

    trace = ForwardTrace(token_ids=token_ids, T=len(token_ids))
    if "attentions" in wanted:
        trace.attentions = np.stack(
            [layer[0].detach().float().cpu().numpy() for layer in out.attentions]
        )
    if "embeddings" in wanted:
        trace.embeddings = embeds.detach().float().cpu().numpy()
    if "logits" in wanted:
        trace.logits = out.logits[0].detach().float().cpu().numpy()
    return trace


def make_optimizer(handle: ModelHandle, hyper: TrainingHyper) -> torch.optim.Optimizer:
    """AdamW over trainable parameters only."""
    params = [p for p in handle.module.parameters() if p.requires_grad]
    return torch.optim.AdamW(params, lr=hyper.learning_rate, weight_decay=hyper.weight_decay)


def compute_loss(
    handle: ModelHandle, batch: Batch, objective: Objective, label_smoothing: float = 0.0
) -> torch.Tensor:
    out = handle.module(input_ids=batch.input_ids, attention_mask=batch.attention_mask)
    if objective == "next_token":
        logits = out.logits[:, :-1, :]
        targets = batch.input_ids[:, 1:].masked_fill(batch.attention_mask[:, 1:] == 0, -100)
        return F.cross_entropy(
            logits.reshape(-1, logits.size(-1)).float(), targets.reshape(-1), ignore_index=-100
        )
    if batch.labels is None:
        raise ValueError("class_label objective needs labels")
    return F.cross_entropy(out.logits.float(), batch.labels, label_smoothing=label_smoothing)


def train_step(
    handle: ModelHandle,
    batch: Batch,
    objective: Objective,
    optimizer: torch.optim.Optimizer,
    max_grad_norm: float = 1.0,
    label_smoothing: float = 0.0,
) -> float:
    """
    One optimisation step.

    Args:
        handle: Model in training
        batch: Padded batch whose lengths fit the context
        objective: ``next_token`` for causal LMs, ``class_label`` for classifiers
        optimizer: Optimizer holding the trainable parameters (its state is updated)
        max_grad_norm: Gradient clipping norm
        label_smoothing: Smoothing of the class targets (``class_label`` only)

    Returns:
        Loss before the update

    Raises:
        DivergenceError: the loss is not finite
    """
    if batch.input_ids.size(1) > handle.context:
        raise ContextOverflowError(length=batch.input_ids.size(1), context=handle.context)
    handle.module.train()
    loss = compute_loss(handle, batch, objective, label_smoothing)
    if not torch.isfinite(loss):
        raise DivergenceError(loss=float(loss.item()), objective=objective)

    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    trainable = [p for p in handle.module.parameters() if p.requires_grad]
    torch.nn.utils.clip_grad_norm_(trainable, max_grad_norm)
    optimizer.step()
    return float(loss.item())


def target_gradients(
    handle: ModelHandle,
    embeds: torch.Tensor,
    target: Callable[[torch.Tensor], torch.Tensor],
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Target values and their gradients w.r.t. a batch of token embeddings.

    Args:
        handle: Model (run in eval mode)
        embeds: Token embeddings [k, T, C]
        target: Maps model logits [k, ...] to one scalar per row [k]

    Returns:
        (values [k], gradients [k, T, C])
    """
    handle.module.eval()
    points = embeds.detach().clone().requires_grad_(True)
    mask = torch.ones(points.shape[:2], dtype=torch.long, device=points.device)
    out = handle.module(inputs_embeds=points, attention_mask=mask)
    values = target(out.logits)
    (grads,) = torch.autograd.grad(values.sum(), points)
    return values.detach(), grads.detach()


def embedding_gradient(
    handle: ModelHandle,
    token_ids: Sequence[int],
    target: Callable[[torch.Tensor], torch.Tensor],
    embeds: Optional[torch.Tensor] = None,
) -> Tuple[float, np.ndarray]:
    """Value and gradient [T, C] of a scalar target with respect to token embeddings."""
    if embeds is None:
        embeds = handle.embed(token_ids).detach()
    values, grads = target_gradients(handle, embeds[None], target)
    return float(values[0].item()), grads[0].cpu().numpy()


class Backend(ABC):
    """Builds, adapts and persists models for one model family."""

    name: str = "abstract"
    default_pretrain_epochs: int = 0

    @abstractmethod
    def build_tokenizer(
        self,
        texts: Iterable[str],
        scheme: TagScheme,
        vocab_size: int,
        single_token: bool = True,
        kind: ModelKind = "causal_lm",
    ) -> Any:
        """Tokenizer with the scheme tags registered."""

    @abstractmethod
    def make_model(
        self,
        kind: ModelKind,
        config: ReferenceModelConfig,
        tokenizer: Any,
        scheme: Optional[TagScheme] = None,
        seed: int = 0,
    ) -> ModelHandle:
        """Fresh (or pretrained) model of the given kind."""

    @abstractmethod
    def attach_lora(self, handle: ModelHandle, lora: LoRASettings) -> ModelHandle:
        """Freeze the base and add adapters; returns the same handle."""

    @abstractmethod
    def save(self, handle: ModelHandle, directory: Union[str, Path], training: Optional[dict] = None) -> None:
        """Write weights, tokenizer and config manifest."""

    @abstractmethod
    def load(self, directory: Union[str, Path]) -> ModelHandle:
        """Read a checkpoint written by ``save``."""

    def clone(self, handle: ModelHandle) -> ModelHandle:
        """Independent copy of a handle (weights deep-copied)."""
        return ModelHandle(
            kind=handle.kind,
            module=copy.deepcopy(handle.module),
            tokenizer=handle.tokenizer,
            scheme=handle.scheme,
            method=handle.method,
            backend=handle.backend,
            architecture=dict(handle.architecture),
            lora=handle.lora,
            pretrain_epochs=handle.pretrain_epochs,
        )


class ReferenceBackend(Backend):
    """The built-in tiny transformer and byte-level BPE tokenizer."""

    name = "reference"
    default_pretrain_epochs = 2

    def build_tokenizer(
        self,
        texts: Iterable[str],
        scheme: TagScheme,
        vocab_size: int,
        single_token: bool = True,
        kind: ModelKind = "causal_lm",
    ) -> StyleTokenizer:
        base = StyleTokenizer.train(texts, vocab_size=vocab_size)
        return extend_tokenizer(base, scheme.all_tags, single_token=single_token)

    def make_model(
        self,
        kind: ModelKind,
        config: ReferenceModelConfig,
        tokenizer: Any,
        scheme: Optional[TagScheme] = None,
        seed: int = 0,
    ) -> ModelHandle:
        if tokenizer is not None:
            config = config.model_copy(update={"vocab": tokenizer.vocab_size})
        if scheme is not None and kind == "classifier":
            config = config.model_copy(update={"num_labels": len(scheme.authors)})
        handle = make_reference_model(config, kind=kind, seed=seed)
        handle.tokenizer = tokenizer
        handle.scheme = scheme
        return handle

    def attach_lora(self, handle: ModelHandle, lora: LoRASettings) -> ModelHandle:
        apply_lora(handle.module, lora)
        handle.lora = lora
        handle.method = "lora"
        return handle

    def save(self, handle: ModelHandle, directory: Union[str, Path], training: Optional[dict] = None) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        torch.save(handle.module.state_dict(), directory / WEIGHTS_FILE)
        handle.tokenizer.save(directory / TOKENIZER_FILE)
        checkpoint = CheckpointConfig(
            backend=self.name,
            kind=handle.kind,
            method=handle.method,
            architecture=handle.architecture,
            scheme_hash=handle.scheme.scheme_hash() if handle.scheme else None,
            scheme=handle.scheme.model_dump(mode="json") if handle.scheme else None,
            training=training,
            lora=handle.lora,
        )
        (directory / CONFIG_FILE).write_text(checkpoint.model_dump_json(indent=2), encoding="utf-8")
        logger.info("Checkpoint saved", path=str(directory), kind=handle.kind, method=handle.method)

    def load(self, directory: Union[str, Path]) -> ModelHandle:
        directory = Path(directory)
        checkpoint = read_checkpoint_config(directory)
        config = ReferenceModelConfig.model_validate(checkpoint.architecture)
        handle = make_reference_model(config, kind=checkpoint.kind)
        if checkpoint.lora is not None:
            self.attach_lora(handle, checkpoint.lora)
        state = torch.load(directory / WEIGHTS_FILE, map_location="cpu")
        handle.module.load_state_dict(state)
        handle.module.to(resolve_device())
        handle.tokenizer = StyleTokenizer.load(directory / TOKENIZER_FILE)
        handle.scheme = TagScheme.model_validate(checkpoint.scheme) if checkpoint.scheme else None
        handle.method = checkpoint.method
        return handle


def read_checkpoint_config(directory: Union[str, Path]) -> CheckpointConfig:
    path = Path(directory) / CONFIG_FILE
    if not path.is_file():
        raise ConfigError("checkpoint config not found", path=str(path))
    return CheckpointConfig.model_validate(json.loads(path.read_text(encoding="utf-8")))


def make_reference_model(
    config: ReferenceModelConfig, kind: ModelKind = "causal_lm", seed: int = 0
) -> ModelHandle:
    """
    Build the reference transformer with deterministic initial weights.

    Args:
        config: Layers, heads, embed_dim, vocab and context
        kind: ``causal_lm`` or ``classifier``
        seed: Initialisation seed

    Returns:
        Handle without tokenizer; the caller attaches one
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        module = ReferenceTransformer(config, kind=kind)
    module.to(resolve_device())
    architecture = config.model_dump()
    handle = ModelHandle(
        kind=kind, module=module, tokenizer=None, backend="reference", architecture=architecture
    )
    logger.debug("Reference model built", kind=kind, parameters=handle.parameter_count)
    return handle


def get_backend(name: Optional[str] = None) -> Backend:
    """Backend selected by name, defaulting to ``STYLEFORGE_BACKEND``."""
    name = name or settings.STYLEFORGE_BACKEND
    if settings.NUM_THREADS:
        torch.set_num_threads(settings.NUM_THREADS)
    if name == "reference":
        return ReferenceBackend()
    if name == "hf":
        from app.services.hf_backend import HuggingFaceBackend

        return HuggingFaceBackend()
    raise ConfigError("unknown backend", backend=name)


def load_handle(directory: Union[str, Path]) -> ModelHandle:
    """Load a checkpoint with whichever backend wrote it."""
    checkpoint = read_checkpoint_config(directory)
    return get_backend(checkpoint.backend).load(directory)
