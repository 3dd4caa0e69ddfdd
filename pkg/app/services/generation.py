"""
Generator fine-tuning, seeded sampling and post-processing of generated sentences.
"""

import re
from collections import Counter
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
import structlog
import torch

from app.core.exceptions import MissingAuthorError, TagCollisionError
from app.schemas import (
    AuthorGenerationStats,
    Corpus,
    FineTuneMethod,
    GeneratedItem,
    GeneratedSet,
    GenerationConfig,
    PostprocessOutcome,
    RawGeneration,
    ReferenceModelConfig,
    Seed,
    SeedVocabulary,
    TagScheme,
    TrainingHyper,
    TrainingReport,
)
from app.services.backend import Backend, ModelHandle, forward
from app.services.corpus import format_example
from app.services.training import encode_for_training, fit

logger = structlog.get_logger(__name__)

TERMINAL_RE = re.compile(r"[.!?][\"'”’)\]]*$")
SEED_WORD_RE = re.compile(r"^[^\w]*(\w+(?:['’-]\w+)*)")
MAX_NGRAM = 3
OPENING_QUOTES = "\"'“‘("
MIN_REPEATS = 3


def prepare_generator(
    backend: Backend,
    corpus: Corpus,
    model_config: ReferenceModelConfig,
    hyper: TrainingHyper,
    seed: int = 0,
    single_token: bool = True,
) -> Tuple[ModelHandle, Optional[TrainingReport]]:
    """
    Base causal model for fine-tuning: tokenizer with tags, fresh weights and a
    pre-training pass on untagged training sentences.

    ``hyper.pretrain_epochs`` falls back to the backend's default, so the reference
    transformer is language-trained before FFT and LoRA start from it.

    Returns:
        (base handle, pre-training report or None when no pass ran)
    """
    texts = [r.text for r in corpus.select("train")]
    tokenizer = backend.build_tokenizer(
        texts, corpus.scheme, vocab_size=model_config.vocab, single_token=single_token
    )
    handle = backend.make_model("causal_lm", model_config, tokenizer, corpus.scheme, seed=seed)
    epochs = hyper.pretrain_epochs if hyper.pretrain_epochs is not None else backend.default_pretrain_epochs
    report = None
    if epochs > 0:
        sequences, _ = encode_for_training(handle, texts)
        report = fit(handle, sequences, hyper, "next_token", epochs=epochs, method="pretrain")
        handle.pretrain_epochs = report.epochs
        logger.info("Base pre-training finished", epochs=report.epochs, steps=report.steps)
    return handle, report


def _check_tags(handle: ModelHandle, scheme: TagScheme) -> None:
    for tag in scheme.all_tags:
        if handle.tokenizer.token_to_id(tag) is None:
            raise TagCollisionError(tag=tag, reason="tokenizer was not extended with the scheme")


def fine_tune(
    backend: Backend,
    base: ModelHandle,
    train: Corpus,
    method: FineTuneMethod,
    hyper: TrainingHyper,
) -> Tuple[ModelHandle, TrainingReport]:
    """
    Fine-tune a copy of the base model on ``<tag> sentence <end>`` strings.

    Args:
        backend: Backend that built the base model
        base: Base causal model; it is not modified
        train: Corpus whose train split is used
        method: ``fft`` trains every parameter, ``lora`` only the adapters
        hyper: Epochs (default 3), batch size, learning rate, LoRA settings

    Returns:
        (fine-tuned handle, training report)

    Raises:
        MissingAuthorError: an author has no training sentences
        DivergenceError: a non-finite loss occurred
    """
    for index, count in train.counts_by_author("train").items():
        if count == 0:
            raise MissingAuthorError(author=train.scheme.name_of(index), split="train")
    _check_tags(base, train.scheme)

    handle = backend.clone(base)
    handle.scheme = train.scheme
    if method == "lora":
        backend.attach_lora(handle, hyper.lora)
    else:
        for p in handle.module.parameters():
            p.requires_grad = True
        handle.method = "fft"

    texts = [format_example(r, train.scheme) for r in train.select("train")]
    sequences, truncated = encode_for_training(handle, texts)
    report = fit(handle, sequences, hyper, "next_token", method=method)
    report.truncated_examples = truncated
    report.base_pretrain_epochs = base.pretrain_epochs
    logger.info(
        "Fine-tuning finished",
        method=method,
        trainable=report.trainable_parameter_count,
        total=report.parameter_count,
        final_loss=report.epoch_losses[-1] if report.epoch_losses else None,
    )
    return handle, report


def generate(handle: ModelHandle, seed: Seed, config: GenerationConfig) -> RawGeneration:
    """
    Autoregressive continuation of a rendered seed.

    Sampling draws from softmax(logits / temperature) with a generator seeded by
    ``config.rng_seed``; with ``sample=False`` the argmax is taken. Generation stops
    after the end tag, after ``max_new_tokens`` or when the context is full.
    """
    scheme = handle.scheme
    if scheme is None:
        raise ValueError("model handle carries no tag scheme")
    tokenizer = handle.tokenizer
    prompt = tokenizer.encode(seed.render(scheme.tag_for(seed.author)))
    end_id = tokenizer.token_to_id(scheme.end_tag)
    ids = list(prompt)
    generator = torch.Generator().manual_seed(config.rng_seed)
    stopped = False

    handle.module.eval()
    with torch.no_grad():
        for _ in range(config.max_new_tokens):
            if len(ids) >= handle.context:
                break
            inputs = torch.tensor([ids], dtype=torch.long, device=handle.device)
            logits = handle.module(input_ids=inputs).logits[0, -1].double().cpu()
            logits[tokenizer.pad_id] = float("-inf")
            if config.sample:
                probs = torch.softmax(logits / config.temperature, dim=-1)
                next_id = int(torch.multinomial(probs, 1, generator=generator).item())
            else:
                next_id = int(torch.argmax(logits).item())
            ids.append(next_id)
            if end_id is not None and next_id == end_id:
                stopped = True
                break

    raw = RawGeneration(
        seed=seed,
        token_ids=ids,
        prompt_len=len(prompt),
        text=tokenizer.decode(ids),
        stopped_on_end_tag=stopped,
    )
    if config.retain_trace:
        raw.trace = forward(handle, ids)
    return raw


def _collapse_repeats(tokens: List[str]) -> List[str]:
    changed = True
    while changed:
        changed = False
        for n in range(1, MAX_NGRAM + 1):
            i = 0
            out: List[str] = []
            while i < len(tokens):
                gram = tokens[i: i + n]
                repeats = 1
                while len(gram) == n and tokens[i + repeats * n: i + (repeats + 1) * n] == gram:
                    repeats += 1
                if len(gram) == n and repeats >= MIN_REPEATS:
                    out.extend(gram)
                    i += repeats * n
                    changed = True
                else:
                    out.append(tokens[i])
                    i += 1
            tokens = out
    return tokens


def clean_generated_text(text: str, scheme: TagScheme) -> PostprocessOutcome:
    """
    Turn decoded text into one clean sentence or a rejection.

    The leading author tag and everything from the first end tag on are removed;
    immediate n-gram repetitions (n <= 3, at least three in a row) collapse to one
    occurrence; the result must end in ``. ! ?`` with optional closing quotes.
    """
    text = text.strip()
    for tag in scheme.author_tags.values():
        if text.startswith(tag):
            text = text[len(tag):]
            break
    cut = text.find(scheme.end_tag)
    if cut >= 0:
        text = text[:cut]
    if any(tag in text for tag in scheme.all_tags):
        return PostprocessOutcome(rejection="contains_tag")

    tokens = _collapse_repeats(text.split())
    sentence = " ".join(tokens)
    if not sentence:
        return PostprocessOutcome(rejection="empty_after_strip")
    if not TERMINAL_RE.search(sentence):
        return PostprocessOutcome(rejection="incomplete")
    return PostprocessOutcome(sentence=sentence)


def postprocess(raw: RawGeneration, scheme: TagScheme) -> PostprocessOutcome:
    return clean_generated_text(raw.text, scheme)


def _seed_word(text: str) -> Optional[str]:
    match = SEED_WORD_RE.match(text)
    return match.group(1) if match else None


def _most_common(counter: Counter, size: int) -> list:
    return [key for key, _ in sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))[:size]]


def build_seed_vocabulary(corpus: Corpus, size: int = 500) -> SeedVocabulary:
    """Most frequent sentence-initial words and two-word openers of the train split."""
    firsts: Counter = Counter()
    openers: Counter = Counter()
    for record in corpus.select("train"):
        words = record.text.split()
        first = _seed_word(words[0]) if words else None
        if first is None:
            continue
        firsts[first] += 1
        if len(words) > 1:
            second = _seed_word(words[1])
            if second is not None and words[0].lstrip(OPENING_QUOTES) == first:
                openers[(first, second)] += 1
    return SeedVocabulary(
        first_words=_most_common(firsts, size),
        openers=[list(pair) for pair in _most_common(openers, size)],
    )


def item_rng(batch_seed: int, author: int, index: int, attempt: int) -> np.random.Generator:
    """Independent stream per (batch seed, author, item, attempt)."""
    return np.random.default_rng(np.random.SeedSequence([batch_seed, author, index, attempt]))


def draw_seed(author: int, vocabulary: SeedVocabulary, rng: np.random.Generator) -> Seed:
    """Tag only, tag plus one word, or tag plus a two-word opener, with equal odds."""
    form = int(rng.integers(3))
    if form == 0 or not vocabulary.first_words:
        return Seed(author=author)
    if form == 2 and vocabulary.openers:
        return Seed(author=author, extra_tokens=list(vocabulary.openers[int(rng.integers(len(vocabulary.openers)))]))
    return Seed(author=author, extra_tokens=[vocabulary.first_words[int(rng.integers(len(vocabulary.first_words)))]])


def generate_batch(
    handle: ModelHandle,
    plan: Mapping[int, int],
    seed_vocabulary: SeedVocabulary,
    config: GenerationConfig,
    retry_factor: int = 10,
    method: Optional[str] = None,
) -> GeneratedSet:
    """
    Generate accepted sentences per author, retrying rejected generations.

    Args:
        handle: Fine-tuned causal model
        plan: Author index to number of sentences
        seed_vocabulary: Words used to extend tag-only seeds
        config: Sampling setup; ``rng_seed`` is the batch seed
        retry_factor: Attempts allowed per author, as a multiple of its plan count
        method: Label stored on the items (defaults to the handle's method)

    Returns:
        Generated set; ``complete`` is False when a budget ran out
    """
    if handle.scheme is None:
        raise ValueError("model handle carries no tag scheme")
    label = method or handle.method
    items: List[GeneratedItem] = []
    stats: Dict[int, AuthorGenerationStats] = {}
    complete = True

    for author in sorted(plan):
        wanted = plan[author]
        if wanted < 1:
            raise ValueError(f"plan count for author {author} must be at least 1")
        budget = retry_factor * wanted
        attempts = 0
        accepted = 0
        rejections: Counter = Counter()
        for index in range(wanted):
            attempt = 0
            while attempts < budget:
                rng = item_rng(config.rng_seed, author, index, attempt)
                seed = draw_seed(author, seed_vocabulary, rng)
                sample_config = config.model_copy(update={"rng_seed": int(rng.integers(2**31 - 1))})
                outcome = postprocess(generate(handle, seed, sample_config), handle.scheme)
                attempts += 1
                if outcome.accepted:
                    items.append(
                        GeneratedItem(
                            seed=seed, author=author, method=label, text=outcome.sentence, retry_count=attempt
                        )
                    )
                    accepted += 1
                    break
                rejections[outcome.rejection] += 1
                logger.debug("Generation rejected", author=author, item=index, attempt=attempt, reason=outcome.rejection)
                attempt += 1
            if attempts >= budget and accepted < index + 1:
                break

        stats[author] = AuthorGenerationStats(
            requested=wanted, accepted=accepted, attempts=attempts, rejections=dict(rejections)
        )
        if accepted < wanted:
            complete = False
            logger.warning("Retry budget exhausted", author=author, accepted=accepted, requested=wanted, attempts=attempts)
        logger.info(
            "Author generation finished",
            author=author,
            accepted=accepted,
            attempts=attempts,
            retries=attempts - accepted,
            acceptance_rate=round(stats[author].acceptance_rate, 4),
        )

    per_author = Counter(item.author for item in items)
    return GeneratedSet(
        items=items,
        method=label,
        per_author_counts={author: per_author.get(author, 0) for author in sorted(plan)},
        stats=stats,
        complete=complete,
    )
