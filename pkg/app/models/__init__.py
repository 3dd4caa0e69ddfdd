"""
Neural models and tokenizers used by the reference backend.
"""

from app.models.lora import LoRALinear, apply_lora, count_parameters, lora_trainable_count
from app.models.tokenizer import PAD_TOKEN, StyleTokenizer, extend_tokenizer
from app.models.transformer import (
    ReferenceOutput,
    ReferenceTransformer,
    reference_parameter_count,
)

__all__ = [
    "LoRALinear",
    "PAD_TOKEN",
    "ReferenceOutput",
    "ReferenceTransformer",
    "StyleTokenizer",
    "apply_lora",
    "count_parameters",
    "extend_tokenizer",
    "lora_trainable_count",
    "reference_parameter_count",
]
