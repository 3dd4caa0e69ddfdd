"""
Low-rank adapters for linear layers.
"""

from typing import List, Sequence, Tuple

import structlog
import torch
from torch import nn

from app.schemas.modeling import LoRASettings

logger = structlog.get_logger(__name__)


class LoRALinear(nn.Module):
    """
    Frozen ``nn.Linear`` plus a trainable update ``B @ A`` scaled by ``alpha / rank``.

    ``B`` starts at zero, so a freshly wrapped layer computes exactly what the base did.
    """

    def __init__(self, base: nn.Linear, rank: int = 8, alpha: float = 16.0):
        super().__init__()
        self.base = base
        self.rank = rank
        self.scaling = alpha / rank
        self.A = nn.Parameter(torch.zeros(rank, base.in_features))
        self.B = nn.Parameter(torch.zeros(base.out_features, rank))
        nn.init.kaiming_uniform_(self.A, a=5**0.5)
        nn.init.zeros_(self.B)
        for p in self.base.parameters():
            p.requires_grad = False

    @property
    def in_features(self) -> int:
        return self.base.in_features

    @property
    def out_features(self) -> int:
        return self.base.out_features

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + (x @ self.A.T) @ self.B.T * self.scaling


def _parent_of(model: nn.Module, name: str) -> Tuple[nn.Module, str]:
    parts = name.split(".")
    parent = model
    for part in parts[:-1]:
        parent = parent[int(part)] if part.isdigit() else getattr(parent, part)
    return parent, parts[-1]


def apply_lora(model: nn.Module, lora: LoRASettings) -> List[str]:
    """
    Freeze every parameter and wrap the targeted linear layers with adapters.

    Args:
        model: Model to modify in place
        lora: Rank, scale and target module suffixes (e.g. ``q_proj``)

    Returns:
        Qualified names of the wrapped layers
    """
    for p in model.parameters():
        p.requires_grad = False

    targets = [
        name for name, module in model.named_modules()
        if isinstance(module, nn.Linear) and name.split(".")[-1] in lora.targets
    ]
    if not targets:
        raise ValueError(f"no linear layer matches LoRA targets {lora.targets}")
    for name in targets:
        parent, attr = _parent_of(model, name)
        base = getattr(parent, attr)
        wrapped = LoRALinear(base, rank=lora.rank, alpha=lora.alpha).to(base.weight.device)
        setattr(parent, attr, wrapped)
    logger.info("LoRA adapters attached", layers=len(targets), rank=lora.rank, alpha=lora.alpha)
    return targets


def lora_trainable_count(
    layers: int, embed_dim: int, rank: int, targets: Sequence[str]
) -> int:
    """rank * (fan_in + fan_out) per square attention projection and layer."""
    return layers * len(targets) * rank * (embed_dim + embed_dim)


def count_parameters(model: nn.Module) -> Tuple[int, int]:
    """Return (total, trainable); tied weights are counted once."""
    total = sum(p.numel() for p in model.parameters())
    trainable = sum(p.numel() for p in model.parameters() if p.requires_grad)
    return total, trainable
