"""
Byte-level BPE tokenizer for the reference backend.
"""

import json
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import structlog
from tokenizers import Tokenizer, decoders, models, pre_tokenizers, trainers

from app.core.exceptions import TagCollisionError

logger = structlog.get_logger(__name__)

PAD_TOKEN = "<pad>"


class StyleTokenizer:
    """Thin wrapper over a ``tokenizers.Tokenizer`` that knows which tokens are tags."""

    def __init__(self, backend: Tokenizer, tags: Optional[Sequence[str]] = None):
        self.backend = backend
        self.tags: List[str] = list(tags or [])

    @classmethod
    def train(
        cls, texts: Iterable[str], vocab_size: int = 8000, min_frequency: int = 2
    ) -> "StyleTokenizer":
        """
        Train a byte-level BPE vocabulary.

        Args:
            texts: Training sentences (tag-free)
            vocab_size: Target vocabulary size, including the 256 byte symbols
            min_frequency: Minimum pair frequency for a merge

        Returns:
            Tokenizer without any tags
        """
        backend = Tokenizer(models.BPE())
        backend.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
        backend.decoder = decoders.ByteLevel()
        trainer = trainers.BpeTrainer(
            vocab_size=vocab_size,
            min_frequency=min_frequency,
            special_tokens=[PAD_TOKEN],
            initial_alphabet=pre_tokenizers.ByteLevel.alphabet(),
            show_progress=False,
        )
        backend.train_from_iterator(texts, trainer=trainer)
        logger.info("Tokenizer trained", vocab_size=backend.get_vocab_size(with_added_tokens=True))
        return cls(backend)

    @property
    def vocab_size(self) -> int:
        return self.backend.get_vocab_size(with_added_tokens=True)

    @property
    def pad_id(self) -> int:
        pad = self.backend.token_to_id(PAD_TOKEN)
        return 0 if pad is None else pad

    @property
    def tag_ids(self) -> List[int]:
        ids = [self.backend.token_to_id(tag) for tag in self.tags]
        return [i for i in ids if i is not None]

    def encode(self, text: str) -> List[int]:
        return self.backend.encode(text, add_special_tokens=False).ids

    def decode(self, ids: Sequence[int]) -> str:
        return self.backend.decode(list(ids), skip_special_tokens=False)

    def token_to_id(self, token: str) -> Optional[int]:
        return self.backend.token_to_id(token)

    def id_to_token(self, token_id: int) -> Optional[str]:
        return self.backend.id_to_token(token_id)

    def display_tokens(self, ids: Sequence[int]) -> List[str]:
        """Human-readable piece for every id (byte-level pieces decoded one by one)."""
        return [self.decode([i]) for i in ids]

    def is_special(self, token: str) -> bool:
        return token == PAD_TOKEN or token in self.tags

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        self.backend.save(str(path))
        path.with_suffix(".tags.json").write_text(json.dumps(self.tags), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "StyleTokenizer":
        path = Path(path)
        backend = Tokenizer.from_file(str(path))
        tags_path = path.with_suffix(".tags.json")
        tags = json.loads(tags_path.read_text(encoding="utf-8")) if tags_path.exists() else []
        return cls(backend, tags)


def extend_tokenizer(
    base: StyleTokenizer, tags: Sequence[str], single_token: bool = True
) -> StyleTokenizer:
    """
    Register scheme tags so that each encodes to exactly one id.

    Tags already registered as special tokens are accepted as-is. With
    ``single_token=False`` the tags are left to the base vocabulary and usually
    split into several pieces.

    Args:
        base: Tokenizer to extend; it is not modified
        tags: Author tags followed by the end tag
        single_token: Add the tags as special tokens

    Returns:
        New tokenizer carrying the tags

    Raises:
        TagCollisionError: a tag is already an ordinary vocabulary token
    """
    backend = Tokenizer.from_str(base.backend.to_str())
    known = set(base.tags)
    if not single_token:
        return StyleTokenizer(backend, [])

    fresh = []
    for tag in tags:
        if tag in known:
            continue
        if backend.token_to_id(tag) is not None:
            raise TagCollisionError(tag=tag)
        fresh.append(tag)
    if fresh:
        backend.add_special_tokens(fresh)
    extended = StyleTokenizer(backend, list(base.tags) + fresh)

    for tag in tags:
        if len(extended.encode(tag)) != 1:
            raise TagCollisionError(tag=tag)
    logger.debug("Tokenizer extended", added=fresh, vocab_size=extended.vocab_size)
    return extended
