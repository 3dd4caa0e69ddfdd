"""
Corpus construction: cleaning, sentence segmentation, filtering and splitting.
"""

import math
import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import structlog

from app.core.config import settings
from app.core.exceptions import ConfigError, MissingAuthorError, NoContentError, TagHygieneError
from app.repositories import sha256_bytes
from app.schemas import Corpus, CorpusManifest, SentenceRecord, TagScheme

logger = structlog.get_logger(__name__)

ABBREVIATIONS_PATH = Path(__file__).resolve().parent.parent / "data" / "abbreviations.txt"

# (start, end) regex pairs tried in order; the generic pair also matches Gutenberg lines
DEFAULT_MARKERS: List[Tuple[str, str]] = [
    (
        r"\*\*\*\s*START OF (?:THE|THIS) PROJECT GUTENBERG E(?:BOOK|TEXT)[^*]*\*\*\*",
        r"\*\*\*\s*END OF (?:THE|THIS) PROJECT GUTENBERG E(?:BOOK|TEXT)[^*]*\*\*\*",
    ),
    (r"\*\*\*\s*START\b[^\n]*?\*\*\*", r"\*\*\*\s*END\b[^\n]*?\*\*\*"),
]

ILLUSTRATION_RE = re.compile(r"\[Illustration[^\]]*\]", re.IGNORECASE)
HEADING_RE = re.compile(
    r"^(?:CHAPTER|BOOK|PART|VOLUME|STAVE|Chapter|Book|Part|Volume|Stave)\s+"
    r"(?:[IVXLCDM]+|\d+)\b[.:]?(?:\s+(?P<title>.+))?$"
)
HEADING_TITLE_WORDS = 8
TERMINAL_END_RE = re.compile(r"[.!?,;][\"'”’)\]]*$")
PARAGRAPH_RE = re.compile(r"\n\s*\n")
WHITESPACE_RE = re.compile(r"\s+")
WORD_RE = re.compile(r"\w+(?:['’-]\w+)*")
# terminal punctuation, optionally followed by closing quotes or brackets
BOUNDARY_RE = re.compile(r"[.!?]+[\"'”’)\]]*(?=\s|$)")
OPENING_PUNCT = "\"'“‘(["


@dataclass(frozen=True)
class RawDocument:
    author: int
    text: str
    source: str


@lru_cache(maxsize=8)
def load_abbreviations(path: Optional[str] = None) -> FrozenSet[str]:
    """Guard list of abbreviations that never end a sentence."""
    source = Path(path or settings.ABBREVIATIONS_FILE or ABBREVIATIONS_PATH)
    if not source.is_file():
        raise ConfigError("abbreviation list not found", path=str(source))
    entries = set()
    for line in source.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            entries.add(line.rstrip("."))
    return frozenset(entries)


def count_words(text: str) -> int:
    """Word count with punctuation-only tokens excluded."""
    return len(WORD_RE.findall(text))


def _strip_boundaries(raw: str, markers: Sequence[Tuple[str, str]]) -> Optional[str]:
    for start_pattern, end_pattern in markers:
        start = re.search(start_pattern, raw)
        if start is None:
            continue
        end = re.search(end_pattern, raw[start.end():])
        return raw[start.end(): start.end() + end.start()] if end else raw[start.end():]
    return None


def is_heading(line: str) -> bool:
    """Chapter-style heading: keyword, numeral and at most a short unpunctuated title."""
    match = HEADING_RE.match(line.strip())
    if match is None:
        return False
    title = match.group("title")
    if title is None:
        return True
    return len(title.split()) <= HEADING_TITLE_WORDS and not TERMINAL_END_RE.search(title)


def _drop_headings(text: str) -> str:
    """
    Remove heading paragraphs, judged on their joined lines, and bare headings that
    open a paragraph whose next line starts a new sentence.
    """
    kept: List[str] = []
    for block in PARAGRAPH_RE.split(text):
        lines = [line.strip() for line in block.splitlines() if line.strip()]
        if not lines or is_heading(" ".join(lines)):
            continue
        first = HEADING_RE.match(lines[0])
        if (
            first is not None
            and first.group("title") is None
            and len(lines) > 1
            and lines[1].lstrip(OPENING_PUNCT)[:1].isupper()
        ):
            lines = lines[1:]
        kept.append("\n".join(lines))
    return "\n\n".join(kept)


def clean_text(
    raw: str,
    markers: Optional[Sequence[Tuple[str, str]]] = None,
    strict: bool = False,
) -> str:
    """
    Strip front and back matter, illustrations and chapter headings, then collapse whitespace.

    Args:
        raw: Decoded text of one document
        markers: (start, end) regex pairs; Gutenberg-style defaults when omitted
        strict: Require a start marker instead of treating the whole text as content

    Returns:
        Body text on a single line with single spaces

    Raises:
        NoContentError: nothing is left between the markers
    """
    text = raw.lstrip("\ufeff").replace("\r\n", "\n").replace("\r", "\n")
    body = _strip_boundaries(text, markers if markers is not None else DEFAULT_MARKERS)
    if body is None:
        if strict:
            raise NoContentError(reason="no boundary markers")
        body = text
    body = ILLUSTRATION_RE.sub(" ", body)
    body = _drop_headings(body)
    cleaned = WHITESPACE_RE.sub(" ", body).strip()
    if not cleaned:
        raise NoContentError()
    if is_heading(cleaned):
        raise NoContentError(reason="only a heading")
    return cleaned


def _is_boundary(text: str, start: int, end: int, abbreviations: FrozenSet[str]) -> bool:
    rest = text[end:].lstrip()
    if rest:
        next_char = rest.lstrip(OPENING_PUNCT)[:1] or rest[:1]
        if next_char.islower() or next_char.isdigit():
            return False
    if text[start:end].rstrip("\"'”’)]") == ".":
        before = text[:start].split()
        if before:
            word = before[-1].lstrip(OPENING_PUNCT)
            if word in abbreviations:
                return False
            if len(word) == 1 and word.isalpha() and word.isupper():
                return False
    return True


def segment(clean: str, abbreviations: Optional[FrozenSet[str]] = None) -> List[str]:
    """
    Split whitespace-normalized text into sentences.

    A boundary is terminal punctuation (optionally closed by quotes) followed by
    whitespace or the end of text, unless the period follows a guarded abbreviation
    or a single-letter initial, or the next word starts lowercase or with a digit.
    Joining the result with single spaces gives back the input.
    """
    guard = abbreviations if abbreviations is not None else load_abbreviations()
    sentences: List[str] = []
    cursor = 0
    for match in BOUNDARY_RE.finditer(clean):
        if not _is_boundary(clean, match.start(), match.end(), guard):
            continue
        piece = clean[cursor: match.end()].strip()
        if piece:
            sentences.append(piece)
        cursor = match.end()
    tail = clean[cursor:].strip()
    if tail:
        sentences.append(tail)
    return sentences


def _contains_tag(text: str, scheme: TagScheme) -> bool:
    return any(tag in text for tag in scheme.all_tags)


def check_tag_hygiene(records: Sequence[SentenceRecord], scheme: TagScheme) -> None:
    for record in records:
        if _contains_tag(record.text, scheme):
            raise TagHygieneError(source_doc=record.source_doc, text=record.text[:80])


def build_corpus(
    docs: Sequence[RawDocument],
    scheme: TagScheme,
    min_words: int = 3,
    max_words: int = 128,
    strict: bool = False,
    markers: Optional[Sequence[Tuple[str, str]]] = None,
    parses: Optional[Mapping[str, str]] = None,
) -> Corpus:
    """
    Clean, segment and filter documents into labelled sentence records.

    Args:
        docs: Raw documents with author index and source identifier
        scheme: Tag scheme; every author in it needs at least one document
        min_words: Shorter sentences are dropped as ``too_short``
        max_words: Longer sentences are dropped as ``too_long``
        strict: Passed to ``clean_text``
        markers: Passed to ``clean_text``
        parses: Optional text-to-parse lookup attached to matching records

    Returns:
        Corpus with every record in the train split

    Raises:
        MissingAuthorError: an author has no documents or no surviving sentences
    """
    present = {doc.author for doc in docs}
    for index in scheme.indices:
        if index not in present:
            raise MissingAuthorError(author=scheme.name_of(index))

    abbreviations = load_abbreviations()
    records: List[SentenceRecord] = []
    rejections: Dict[str, int] = {"too_short": 0, "too_long": 0, "contains_tag": 0}
    provenance: Dict[str, str] = {}

    for doc in docs:
        if doc.author not in scheme.indices:
            logger.warning("Document for unknown author skipped", source=doc.source, author=doc.author)
            continue
        provenance[doc.source] = sha256_bytes(doc.text.encode("utf-8"))
        try:
            body = clean_text(doc.text, markers=markers, strict=strict)
        except NoContentError as exc:
            exc.context.setdefault("source", doc.source)
            raise
        for sentence in segment(body, abbreviations):
            words = count_words(sentence)
            if words < min_words or words == 0:
                rejections["too_short"] += 1
                continue
            if words > max_words:
                rejections["too_long"] += 1
                continue
            if _contains_tag(sentence, scheme):
                rejections["contains_tag"] += 1
                continue
            records.append(
                SentenceRecord(
                    text=sentence,
                    author=doc.author,
                    split="train",
                    source_doc=doc.source,
                    parse=parses.get(sentence) if parses else None,
                    word_count=words,
                )
            )

    corpus = Corpus(records=records, scheme=scheme, provenance=provenance, rejections=rejections)
    for index, count in corpus.counts_by_author().items():
        if count == 0:
            raise MissingAuthorError(author=scheme.name_of(index), reason="no sentences survived filtering")
    check_tag_hygiene(corpus.records, scheme)
    logger.info(
        "Corpus built",
        records=len(records),
        documents=len(provenance),
        rejected=sum(rejections.values()),
    )
    return corpus


def split_corpus(corpus: Corpus, test_fraction: float = 0.20, rng_seed: int = 0) -> Corpus:
    """
    Stratified train/test assignment.

    Each author gets ``round(test_fraction * n)`` test records drawn with a generator
    seeded from (rng_seed, author), so the draw for one author does not depend on the
    others.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("test_fraction must be in (0, 1)", test_fraction=test_fraction)

    by_author: Dict[int, List[int]] = {}
    for position, record in enumerate(corpus.records):
        by_author.setdefault(record.author, []).append(position)

    test_positions = set()
    for author, positions in sorted(by_author.items()):
        n_test = int(math.floor(test_fraction * len(positions) + 0.5))
        rng = np.random.default_rng(np.random.SeedSequence([rng_seed, author]))
        chosen = rng.choice(len(positions), size=n_test, replace=False)
        test_positions.update(positions[i] for i in chosen)

    records = [
        record.model_copy(update={"split": "test" if position in test_positions else "train"})
        for position, record in enumerate(corpus.records)
    ]
    split = corpus.model_copy(update={"records": records})
    logger.info(
        "Corpus split",
        test_fraction=test_fraction,
        seed=rng_seed,
        train=len(split.select("train")),
        test=len(split.select("test")),
    )
    return split


def format_example(record: SentenceRecord, scheme: TagScheme) -> str:
    """``<tag> sentence <end>``: the training string for one record."""
    return f"{scheme.tag_for(record.author)} {record.text} {scheme.end_tag}"


def strip_tags(text: str, scheme: TagScheme) -> str:
    """Inverse of ``format_example``."""
    for tag in scheme.author_tags.values():
        if text.startswith(tag + " "):
            text = text[len(tag) + 1:]
            break
    suffix = " " + scheme.end_tag
    if text.endswith(suffix):
        text = text[: -len(suffix)]
    return text


def load_documents(input_dir: Union[str, Path], scheme: TagScheme) -> List[RawDocument]:
    """
    Read ``<input_dir>/<author>/*.txt``; the folder name is an author name or index.
    """
    root = Path(input_dir)
    if not root.is_dir():
        raise ConfigError("corpus input directory not found", path=str(root))
    docs: List[RawDocument] = []
    for folder in sorted(p for p in root.iterdir() if p.is_dir()):
        author = scheme.index_of(folder.name)
        if author is None:
            logger.warning("Folder does not name an author", folder=folder.name)
            continue
        for path in sorted(folder.glob("*.txt")):
            docs.append(
                RawDocument(
                    author=author,
                    text=path.read_text(encoding="utf-8"),
                    source=path.relative_to(root).as_posix(),
                )
            )
    logger.info("Documents loaded", documents=len(docs), path=str(root))
    return docs


def build_manifest(
    corpus: Corpus,
    records_sha256: str,
    test_fraction: Optional[float] = None,
    seed: Optional[int] = None,
) -> CorpusManifest:
    per_author = {}
    for index in corpus.scheme.indices:
        train = len(corpus.select("train", index))
        test = len(corpus.select("test", index))
        per_author[corpus.scheme.name_of(index)] = {"train": train, "test": test, "total": train + test}
    return CorpusManifest(
        per_author=per_author,
        rejections=dict(corpus.rejections),
        provenance=dict(corpus.provenance),
        records_sha256=records_sha256,
        scheme_hash=corpus.scheme.scheme_hash(),
        test_fraction=test_fraction,
        seed=seed,
        total=len(corpus.records),
    )
