"""
Syntactic features from bracketed parse trees and real-versus-generated comparison.
"""

import hashlib
import math
import re
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
import structlog
from nltk import Tree
from scipy.stats import entropy

from app.core.exceptions import MalformedTreeError
from app.schemas import FeatureComparison, FeatureVector, Histogram, Population, SentenceRecord
from app.services.corpus import WORD_RE, count_words

logger = structlog.get_logger(__name__)

REGISTRY_VERSION = 1
DEFAULT_BINS = 20
NON_CONSTITUENT_LABELS = frozenset({"", "ROOT", "TOP"})
CLAUSE_LABELS = frozenset({"S", "SINV", "SQ", "SBARQ"})
QUOTE_CHARS = "\"“”"


# Tree reading


def parse_tree_from_bracketed(s: str) -> Tree:
    """
    Read a Penn-style bracketed tree.

    Raises:
        MalformedTreeError: unbalanced or empty input, or a non-terminal without children
    """
    if not s or not s.strip():
        raise MalformedTreeError(reason="empty input")
    try:
        tree = Tree.fromstring(s)
    except (ValueError, IndexError) as exc:
        raise MalformedTreeError(reason=str(exc)) from exc
    if not isinstance(tree, Tree):
        raise MalformedTreeError(reason="no bracketed constituent")
    for node in tree.subtrees():
        if len(node) == 0:
            raise MalformedTreeError(reason=f"constituent {node.label()!r} has no children")
    return tree


def serialize_tree(tree: Tree) -> str:
    return tree.pformat(margin=10**9)


def normalize_bracketed(s: str) -> str:
    """Whitespace form that ``serialize_tree`` produces."""
    s = re.sub(r"\s+", " ", s).strip()
    return re.sub(r"\s+\)", ")", s)


def base_label(label: str) -> str:
    """Strip function tags and indices: ``NP-SBJ-1`` -> ``NP``; ``-NONE-`` stays."""
    if label.startswith("-"):
        return label
    return re.split(r"[-=]", label, maxsplit=1)[0]


def is_preterminal(node: Tree) -> bool:
    return all(not isinstance(child, Tree) for child in node)


def phrasal_nodes(tree: Tree) -> List[Tree]:
    """Non-terminals that are neither pre-terminals nor a ROOT/TOP wrapper."""
    return [
        node for node in tree.subtrees()
        if not is_preterminal(node) and base_label(node.label()) not in NON_CONSTITUENT_LABELS
    ]


def longest_path(tree: Tree) -> int:
    """Edges on the longest root-to-leaf path."""
    return tree.height() - 1


def label_percentage(tree: Tree, label: str) -> float:
    phrasal = phrasal_nodes(tree)
    if not phrasal:
        return 0.0
    hits = sum(1 for node in phrasal if base_label(node.label()) == label)
    return 100.0 * hits / len(phrasal)


def pp_percentage(tree: Tree) -> float:
    """Share of phrasal constituents labelled PP, in percent."""
    return label_percentage(tree, "PP")


def clause_count(tree: Tree) -> float:
    return float(sum(1 for node in tree.subtrees() if base_label(node.label()) in CLAUSE_LABELS))


def mean_branching_factor(tree: Tree) -> float:
    phrasal = phrasal_nodes(tree)
    if not phrasal:
        return 0.0
    return sum(len(node) for node in phrasal) / len(phrasal)


def type_token_ratio(text: str) -> float:
    words = [w.lower() for w in WORD_RE.findall(text)]
    return len(set(words)) / len(words) if words else 0.0


# Feature registry


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    source: str  # "text" or "tree"
    compute: Callable[..., float]


def _text(name: str, fn: Callable[[str], float]) -> FeatureSpec:
    return FeatureSpec(name, "text", fn)


def _tree(name: str, fn: Callable[[Tree], float]) -> FeatureSpec:
    return FeatureSpec(name, "tree", fn)


FEATURE_REGISTRY: "OrderedDict[str, FeatureSpec]" = OrderedDict(
    (spec.name, spec)
    for spec in [
        _text("words_per_sentence", lambda text: float(count_words(text))),
        _tree("pp_percentage", pp_percentage),
        _tree("longest_parse_path", lambda tree: float(longest_path(tree))),
        _text("char_length", lambda text: float(len(text))),
        _tree("clause_count", clause_count),
        _tree("np_percentage", lambda tree: label_percentage(tree, "NP")),
        _tree("vp_percentage", lambda tree: label_percentage(tree, "VP")),
        _tree("adjp_percentage", lambda tree: label_percentage(tree, "ADJP")),
        _tree("advp_percentage", lambda tree: label_percentage(tree, "ADVP")),
        _tree("sbar_percentage", lambda tree: label_percentage(tree, "SBAR")),
        _tree("mean_branching_factor", mean_branching_factor),
        _tree("node_count", lambda tree: float(len(list(tree.subtrees())))),
        _tree("preterminal_count", lambda tree: float(sum(1 for n in tree.subtrees() if is_preterminal(n)))),
        _text("comma_count", lambda text: float(text.count(","))),
        _text("quotation_count", lambda text: float(sum(text.count(c) for c in QUOTE_CHARS))),
        _text("type_token_ratio", type_token_ratio),
    ]
)


def registry_signature() -> str:
    """``v<version>|name:source|...`` over the registry in order."""
    parts = [f"v{REGISTRY_VERSION}"] + [f"{s.name}:{s.source}" for s in FEATURE_REGISTRY.values()]
    return "|".join(parts)


def registry_hash() -> str:
    return hashlib.sha256(registry_signature().encode("utf-8")).hexdigest()


def resolve_features(features: Union[Sequence[str], str] = "all") -> List[str]:
    if features == "all":
        return list(FEATURE_REGISTRY)
    unknown = [name for name in features if name not in FEATURE_REGISTRY]
    if unknown:
        raise ValueError(f"unknown features: {unknown}")
    return list(features)


def vector_from_text(
    sentence_id: str, author: int, text: str, parse: Optional[str] = None
) -> FeatureVector:
    """Every registry feature; tree features are listed as absent without a usable parse."""
    tree = None
    if parse:
        try:
            tree = parse_tree_from_bracketed(parse)
        except MalformedTreeError:
            logger.warning("Unreadable parse ignored", sentence_id=sentence_id)
    values: Dict[str, float] = {}
    absent: List[str] = []
    for name, spec in FEATURE_REGISTRY.items():
        if spec.source == "tree":
            if tree is None:
                absent.append(name)
                continue
            values[name] = float(spec.compute(tree))
        else:
            values[name] = float(spec.compute(text))
    return FeatureVector(sentence_id=sentence_id, author=author, values=values, absent=absent)


def feature_vector(record: SentenceRecord, sentence_id: str = "0") -> FeatureVector:
    return vector_from_text(sentence_id, record.author, record.text, record.parse)


# Parse providers


class ParseProvider(Protocol):
    def parse(self, text: str) -> Optional[str]:
        ...


class SidecarParseProvider:
    """Looks sentences up in a text-to-parse mapping read from a sidecar file."""

    def __init__(self, parses: Mapping[str, str]):
        self.parses = dict(parses)

    def parse(self, text: str) -> Optional[str]:
        return self.parses.get(text)


# Histograms and divergence


def shared_edges(values: Sequence[float], bins: int = DEFAULT_BINS) -> np.ndarray:
    """Equal-width edges over the pooled range, widened by 0.5 each side when degenerate."""
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi - lo <= 0.0:
        lo, hi = lo - 0.5, hi + 0.5
    return np.linspace(lo, hi, bins + 1)


def histogram(
    values: Sequence[float], edges: np.ndarray, feature: str, population: Population, author: Optional[int] = None
) -> Histogram:
    counts, _ = np.histogram(np.asarray(values, dtype=np.float64), bins=edges)
    return Histogram(
        feature=feature,
        edges=[float(e) for e in edges],
        counts=[int(c) for c in counts],
        population=population,
        author=author,
    )


def js_divergence(p_counts: Sequence[int], q_counts: Sequence[int]) -> float:
    """Jensen-Shannon divergence (natural log) of two count vectors, in [0, ln 2]."""
    p = np.asarray(p_counts, dtype=np.float64)
    q = np.asarray(q_counts, dtype=np.float64)
    p = p / p.sum()
    q = q / q.sum()
    m = 0.5 * (p + q)
    value = float(entropy(m) - 0.5 * (entropy(p) + entropy(q)))
    return min(max(value, 0.0), math.log(2.0))


def _values(vectors: Sequence[FeatureVector], feature: str) -> List[float]:
    return [v.values[feature] for v in vectors if feature in v.values]


def compare(
    real: Sequence[FeatureVector],
    generated: Sequence[FeatureVector],
    feature: str,
    bins: int = DEFAULT_BINS,
    author: Optional[int] = None,
) -> FeatureComparison:
    """
    Histograms of one feature for both populations on shared edges, plus their divergence.

    Raises:
        ValueError: either population has no value for the feature
    """
    real_values = _values(real, feature)
    gen_values = _values(generated, feature)
    if not real_values or not gen_values:
        raise ValueError(f"both populations need values for {feature}")
    edges = shared_edges(real_values + gen_values, bins)
    real_hist = histogram(real_values, edges, feature, "real", author)
    gen_hist = histogram(gen_values, edges, feature, "generated", author)
    return FeatureComparison(
        feature=feature,
        author=author,
        real=real_hist,
        generated=gen_hist,
        divergence=js_divergence(real_hist.counts, gen_hist.counts),
    )


def compare_populations(
    real: Sequence[FeatureVector],
    generated: Sequence[FeatureVector],
    features: Sequence[str],
    bins: int = DEFAULT_BINS,
    authors: Optional[Sequence[int]] = None,
) -> List[FeatureComparison]:
    """Pooled and per-author comparisons; empty populations are skipped and logged."""
    groups: List[Tuple[Optional[int], Sequence[FeatureVector], Sequence[FeatureVector]]] = [
        (None, real, generated)
    ]
    for author in authors or []:
        groups.append(
            (author, [v for v in real if v.author == author], [v for v in generated if v.author == author])
        )
    comparisons = []
    for author, real_group, gen_group in groups:
        for feature in features:
            if not _values(real_group, feature) or not _values(gen_group, feature):
                logger.info("Empty population skipped", feature=feature, author=author)
                continue
            comparisons.append(compare(real_group, gen_group, feature, bins, author))
    return comparisons
