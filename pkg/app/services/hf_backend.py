"""
Hugging Face backend for pretrained causal LMs and sequence classifiers.

Needs the optional ``hf`` extra (transformers, peft). Models are loaded with eager
attention so that attention probabilities can be returned.
"""

import json
from pathlib import Path
from typing import Any, Iterable, List, Optional, Sequence, Union

import structlog

from app.core.config import settings
from app.core.exceptions import ConfigError, TagCollisionError
from app.schemas.corpus import TagScheme
from app.schemas.modeling import CheckpointConfig, LoRASettings, ModelKind, ReferenceModelConfig
from app.services.backend import (
    CONFIG_FILE,
    Backend,
    ModelHandle,
    read_checkpoint_config,
    resolve_device,
)

logger = structlog.get_logger(__name__)

HF_MODEL_DIR = "hf_model"
HF_TOKENIZER_DIR = "hf_tokenizer"


def _require_transformers() -> Any:
    try:
        import transformers
    except ImportError as exc:
        raise ConfigError("the hf backend needs the 'hf' extra (transformers, peft)") from exc
    return transformers


def _require_peft() -> Any:
    try:
        import peft
    except ImportError as exc:
        raise ConfigError("LoRA on the hf backend needs the 'hf' extra (peft)") from exc
    return peft


class HFTokenizerAdapter:
    """Gives a pretrained tokenizer the same surface as ``StyleTokenizer``."""

    def __init__(self, hf_tokenizer: Any, tags: Optional[Sequence[str]] = None):
        self.hf = hf_tokenizer
        self.tags: List[str] = list(tags or [])

    @property
    def vocab_size(self) -> int:
        return len(self.hf)

    @property
    def pad_id(self) -> int:
        if self.hf.pad_token_id is not None:
            return int(self.hf.pad_token_id)
        return int(self.hf.eos_token_id or 0)

    @property
    def tag_ids(self) -> List[int]:
        ids = [self.token_to_id(tag) for tag in self.tags]
        return [i for i in ids if i is not None]

    def encode(self, text: str) -> List[int]:
        return list(self.hf.encode(text, add_special_tokens=False))

    def decode(self, ids: Sequence[int]) -> str:
        return self.hf.decode(
            list(ids), skip_special_tokens=False, clean_up_tokenization_spaces=False
        )

    def token_to_id(self, token: str) -> Optional[int]:
        return self.hf.get_vocab().get(token)

    def id_to_token(self, token_id: int) -> Optional[str]:
        return self.hf.convert_ids_to_tokens(token_id)

    def display_tokens(self, ids: Sequence[int]) -> List[str]:
        return [self.decode([i]) for i in ids]

    def is_special(self, token: str) -> bool:
        return token in self.hf.all_special_tokens or token in self.tags

    def save(self, path: Union[str, Path]) -> None:
        directory = Path(path).parent / HF_TOKENIZER_DIR
        self.hf.save_pretrained(str(directory))
        (directory / "styleforge_tags.json").write_text(json.dumps(self.tags), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "HFTokenizerAdapter":
        transformers = _require_transformers()
        directory = Path(path).parent / HF_TOKENIZER_DIR
        hf = transformers.AutoTokenizer.from_pretrained(str(directory))
        tags_file = directory / "styleforge_tags.json"
        tags = json.loads(tags_file.read_text(encoding="utf-8")) if tags_file.exists() else []
        return cls(hf, tags)


class HuggingFaceBackend(Backend):
    """Pretrained generator/classifier pair named in settings."""

    name = "hf"

    def _model_name(self, kind: ModelKind) -> str:
        return settings.HF_GENERATOR_MODEL if kind == "causal_lm" else settings.HF_CLASSIFIER_MODEL

    def build_tokenizer(
        self,
        texts: Iterable[str],
        scheme: TagScheme,
        vocab_size: int,
        single_token: bool = True,
        kind: ModelKind = "causal_lm",
    ) -> HFTokenizerAdapter:
        transformers = _require_transformers()
        hf = transformers.AutoTokenizer.from_pretrained(self._model_name(kind))
        if hf.pad_token is None:
            hf.pad_token = hf.eos_token
        if not single_token:
            return HFTokenizerAdapter(hf, [])

        vocab = hf.get_vocab()
        for tag in scheme.all_tags:
            if tag in vocab and tag not in hf.all_special_tokens:
                raise TagCollisionError(tag=tag, model=self._model_name(kind))
        hf.add_special_tokens({"additional_special_tokens": scheme.all_tags})
        adapter = HFTokenizerAdapter(hf, scheme.all_tags)
        for tag in scheme.all_tags:
            if len(adapter.encode(tag)) != 1:
                raise TagCollisionError(tag=tag)
        return adapter

    def _architecture(self, model: Any) -> dict:
        cfg = model.config
        return {
            "layers": getattr(cfg, "num_layers", None) or cfg.num_hidden_layers,
            "heads": getattr(cfg, "num_heads", None) or cfg.num_attention_heads,
            "embed_dim": cfg.hidden_size,
            "context": cfg.max_position_embeddings,
            "vocab": cfg.vocab_size,
        }

    def _load_pretrained(self, kind: ModelKind, name: str, num_labels: int) -> Any:
        transformers = _require_transformers()
        if kind == "causal_lm":
            return transformers.AutoModelForCausalLM.from_pretrained(
                name, attn_implementation="eager"
            )
        return transformers.AutoModelForSequenceClassification.from_pretrained(
            name, num_labels=num_labels, attn_implementation="eager"
        )

    def make_model(
        self,
        kind: ModelKind,
        config: ReferenceModelConfig,
        tokenizer: Any,
        scheme: Optional[TagScheme] = None,
        seed: int = 0,
    ) -> ModelHandle:
        transformers = _require_transformers()
        transformers.set_seed(seed)
        num_labels = len(scheme.authors) if scheme is not None else config.num_labels
        model = self._load_pretrained(kind, self._model_name(kind), num_labels)
        model.resize_token_embeddings(tokenizer.vocab_size)
        if kind == "classifier" and model.config.pad_token_id is None:
            model.config.pad_token_id = tokenizer.pad_id
        model.to(resolve_device())
        logger.info("Pretrained model loaded", model=self._model_name(kind), kind=kind)
        return ModelHandle(
            kind=kind,
            module=model,
            tokenizer=tokenizer,
            scheme=scheme,
            backend=self.name,
            architecture=self._architecture(model),
        )

    def attach_lora(self, handle: ModelHandle, lora: LoRASettings) -> ModelHandle:
        peft = _require_peft()
        task = peft.TaskType.CAUSAL_LM if handle.kind == "causal_lm" else peft.TaskType.SEQ_CLS
        peft_config = peft.LoraConfig(
            r=lora.rank,
            lora_alpha=lora.alpha,
            lora_dropout=0.0,
            target_modules=lora.targets,
            bias="none",
            task_type=task,
        )
        handle.module = peft.get_peft_model(handle.module, peft_config)
        handle.lora = lora
        handle.method = "lora"
        return handle

    def save(self, handle: ModelHandle, directory: Union[str, Path], training: Optional[dict] = None) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        handle.module.save_pretrained(str(directory / HF_MODEL_DIR))
        handle.tokenizer.save(directory / "tokenizer.json")
        checkpoint = CheckpointConfig(
            backend=self.name,
            kind=handle.kind,
            method=handle.method,
            architecture=handle.architecture,
            scheme_hash=handle.scheme.scheme_hash() if handle.scheme else None,
            scheme=handle.scheme.model_dump(mode="json") if handle.scheme else None,
            training=training,
            lora=handle.lora,
            base_model=self._model_name(handle.kind),
        )
        (directory / CONFIG_FILE).write_text(checkpoint.model_dump_json(indent=2), encoding="utf-8")
        logger.info("Checkpoint saved", path=str(directory), kind=handle.kind, method=handle.method)

    def load(self, directory: Union[str, Path]) -> ModelHandle:
        directory = Path(directory)
        checkpoint = read_checkpoint_config(directory)
        tokenizer = HFTokenizerAdapter.load(directory / "tokenizer.json")
        scheme = TagScheme.model_validate(checkpoint.scheme) if checkpoint.scheme else None
        num_labels = len(scheme.authors) if scheme is not None else 5
        if checkpoint.lora is not None:
            peft = _require_peft()
            base = self._load_pretrained(checkpoint.kind, checkpoint.base_model or "", num_labels)
            base.resize_token_embeddings(tokenizer.vocab_size)
            model = peft.PeftModel.from_pretrained(base, str(directory / HF_MODEL_DIR))
        else:
            model = self._load_pretrained(checkpoint.kind, str(directory / HF_MODEL_DIR), num_labels)
        model.to(resolve_device())
        return ModelHandle(
            kind=checkpoint.kind,
            module=model,
            tokenizer=tokenizer,
            scheme=scheme,
            method=checkpoint.method,
            backend=self.name,
            architecture=checkpoint.architecture,
            lora=checkpoint.lora,
        )
