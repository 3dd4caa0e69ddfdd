"""
Reference transformer: a small pre-LayerNorm decoder with learned positions.

The causal LM ties its output head to the token embedding. The classifier shares
the trunk and mean-pools the final states over valid positions.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import torch
import torch.nn as nn
from torch.nn import functional as F

from app.core.exceptions import ContextOverflowError
from app.schemas.modeling import ModelKind, ReferenceModelConfig


@dataclass
class ReferenceOutput:
    logits: torch.Tensor
    attentions: Optional[List[torch.Tensor]] = None
    hidden: Optional[torch.Tensor] = None


class CausalSelfAttention(nn.Module):

    def __init__(self, config: ReferenceModelConfig):
        super().__init__()
        if config.embed_dim % config.heads != 0:
            raise ValueError("embed_dim must be divisible by heads")
        self.heads = config.heads
        self.embed_dim = config.embed_dim
        # separate projections so adapters can target q/k/v/out individually
        self.q_proj = nn.Linear(config.embed_dim, config.embed_dim)
        self.k_proj = nn.Linear(config.embed_dim, config.embed_dim)
        self.v_proj = nn.Linear(config.embed_dim, config.embed_dim)
        self.out_proj = nn.Linear(config.embed_dim, config.embed_dim)
        self.attn_dropout = nn.Dropout(config.dropout)
        self.resid_dropout = nn.Dropout(config.dropout)
        self.register_buffer(
            "causal",
            torch.tril(torch.ones(config.context, config.context, dtype=torch.bool)),
            persistent=False,
        )

    def forward(
        self, x: torch.Tensor, key_mask: Optional[torch.Tensor] = None
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        B, T, C = x.size()
        hs = C // self.heads
        q = self.q_proj(x).view(B, T, self.heads, hs).transpose(1, 2)  # (B, nh, T, hs)
        k = self.k_proj(x).view(B, T, self.heads, hs).transpose(1, 2)
        v = self.v_proj(x).view(B, T, self.heads, hs).transpose(1, 2)

        att = (q @ k.transpose(-2, -1)) * (1.0 / math.sqrt(hs))
        att = att.masked_fill(~self.causal[:T, :T], float("-inf"))
        if key_mask is not None:
            att = att.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        att = F.softmax(att, dim=-1)
        probs = att
        att = self.attn_dropout(att)
        y = att @ v
        y = y.transpose(1, 2).contiguous().view(B, T, C)
        return self.resid_dropout(self.out_proj(y)), probs


class MLP(nn.Module):

    def __init__(self, config: ReferenceModelConfig):
        super().__init__()
        self.fc_in = nn.Linear(config.embed_dim, 4 * config.embed_dim)
        self.gelu = nn.GELU()
        self.fc_out = nn.Linear(4 * config.embed_dim, config.embed_dim)
        self.dropout = nn.Dropout(config.dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.dropout(self.fc_out(self.gelu(self.fc_in(x))))


class Block(nn.Module):

    def __init__(self, config: ReferenceModelConfig):
        super().__init__()
        self.ln_1 = nn.LayerNorm(config.embed_dim)
        self.attn = CausalSelfAttention(config)
        self.ln_2 = nn.LayerNorm(config.embed_dim)
        self.mlp = MLP(config)

    def forward(
        self, x: torch.Tensor, key_mask: Optional[torch.Tensor] = None
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        attended, probs = self.attn(self.ln_1(x), key_mask)
        x = x + attended
        x = x + self.mlp(self.ln_2(x))
        return x, probs


class ReferenceTransformer(nn.Module):
    """Decoder-only trunk with either an LM head or a pooled classification head."""

    def __init__(self, config: ReferenceModelConfig, kind: ModelKind = "causal_lm"):
        super().__init__()
        self.config = config
        self.kind = kind
        self.wte = nn.Embedding(config.vocab, config.embed_dim)
        self.wpe = nn.Embedding(config.context, config.embed_dim)
        self.drop = nn.Dropout(config.dropout)
        self.blocks = nn.ModuleList([Block(config) for _ in range(config.layers)])
        self.ln_f = nn.LayerNorm(config.embed_dim)
        if kind == "causal_lm":
            self.lm_head = nn.Linear(config.embed_dim, config.vocab, bias=False)
            self.lm_head.weight = self.wte.weight
        else:
            self.score = nn.Linear(config.embed_dim, config.num_labels)
        self.apply(self._init_weights)

    def _init_weights(self, module: nn.Module) -> None:
        if isinstance(module, nn.Linear):
            nn.init.normal_(module.weight, mean=0.0, std=self.config.init_std)
            if module.bias is not None:
                nn.init.zeros_(module.bias)
        elif isinstance(module, nn.Embedding):
            nn.init.normal_(module.weight, mean=0.0, std=self.config.init_std)

    def get_input_embeddings(self) -> nn.Embedding:
        return self.wte

    def forward(
        self,
        input_ids: Optional[torch.Tensor] = None,
        inputs_embeds: Optional[torch.Tensor] = None,
        attention_mask: Optional[torch.Tensor] = None,
        output_attentions: bool = False,
    ) -> ReferenceOutput:
        """
        Run the trunk and the head.

        ``inputs_embeds`` are token embeddings only; positions are added here, so a
        zeroed row keeps its positional signal.
        """
        if inputs_embeds is None:
            if input_ids is None:
                raise ValueError("input_ids or inputs_embeds is required")
            inputs_embeds = self.wte(input_ids)
        B, T, _ = inputs_embeds.size()
        if T > self.config.context:
            raise ContextOverflowError(length=T, context=self.config.context)

        key_mask = attention_mask.bool() if attention_mask is not None else None
        pos = torch.arange(T, device=inputs_embeds.device)
        x = self.drop(inputs_embeds + self.wpe(pos))

        attentions = []
        for block in self.blocks:
            x, probs = block(x, key_mask)
            if output_attentions:
                attentions.append(probs)
        x = self.ln_f(x)

        if self.kind == "causal_lm":
            logits = self.lm_head(x)
        else:
            if key_mask is None:
                pooled = x.mean(dim=1)
            else:
                weights = key_mask.to(x.dtype).unsqueeze(-1)
                pooled = (x * weights).sum(dim=1) / weights.sum(dim=1).clamp(min=1.0)
            logits = self.score(pooled)
        return ReferenceOutput(logits=logits, attentions=attentions or None, hidden=x)


def reference_parameter_count(config: ReferenceModelConfig, kind: ModelKind = "causal_lm") -> int:
    """Closed-form parameter count; the LM head is tied and adds nothing."""
    C = config.embed_dim
    total = config.vocab * C + config.context * C
    total += config.layers * (12 * C * C + 13 * C)
    total += 2 * C
    if kind == "classifier":
        total += C * config.num_labels + config.num_labels
    return total
