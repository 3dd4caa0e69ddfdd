"""
Syntactic feature and divergence tests.
"""

import math

import numpy as np
import pytest
from nltk import Tree

from app.core.exceptions import MalformedTreeError
from app.schemas import FeatureVector, GenerationConfig, ReferenceModelConfig, Seed, TrainingHyper
from app.services.backend import ReferenceBackend
from app.services.generation import generate, prepare_generator
from app.services.synfeat import (
    FEATURE_REGISTRY,
    SidecarParseProvider,
    base_label,
    clause_count,
    compare,
    compare_populations,
    feature_vector,
    js_divergence,
    longest_path,
    mean_branching_factor,
    normalize_bracketed,
    parse_tree_from_bracketed,
    pp_percentage,
    registry_hash,
    registry_signature,
    resolve_features,
    serialize_tree,
    shared_edges,
    type_token_ratio,
    vector_from_text,
)

DOG = "(ROOT (S (NP (DT The) (NN dog)) (VP (VBD ran))))"
SAT = "(ROOT (S (NP (PRP He)) (VP (VBD sat) (PP (IN down)))))"

PHRASE_LABELS = ["S", "NP", "VP", "PP", "ADJP", "SBAR", "NP-SBJ"]


def _random_tree(rng: np.random.Generator, depth: int = 0) -> Tree:
    if depth >= 5 or (depth > 0 and rng.random() < 0.3):
        return Tree("NN", [f"w{int(rng.integers(100))}"])
    label = PHRASE_LABELS[int(rng.integers(len(PHRASE_LABELS)))]
    return Tree(label, [_random_tree(rng, depth + 1) for _ in range(int(rng.integers(1, 4)))])


def _depth(node) -> int:
    if not isinstance(node, Tree):
        return 0
    return 1 + max(_depth(child) for child in node)


def _phrasal_labels(node, out):
    if isinstance(node, Tree):
        if any(isinstance(child, Tree) for child in node) and node.label() != "ROOT":
            out.append(node.label().split("-")[0])
        for child in node:
            _phrasal_labels(child, out)
    return out


class TestParseTree:
    """Test reading bracketed trees."""

    def test_simple_tree(self):
        """Test a three-level tree with three leaves."""
        tree = parse_tree_from_bracketed("(S (NP (DT The) (NN dog)) (VP (VBD ran)))")

        assert tree.label() == "S"
        assert tree.leaves() == ["The", "dog", "ran"]
        assert [child.label() for child in tree] == ["NP", "VP"]

    @pytest.mark.parametrize("bad", ["((", "", "   ", "(S (NP dog)", "(S )", "dog"])
    def test_malformed(self, bad):
        """Test that unbalanced, empty or childless input is refused."""
        with pytest.raises(MalformedTreeError):
            parse_tree_from_bracketed(bad)

    def test_serialize_is_normalized_input(self):
        """Test that a tree prints back to its normalized bracketed form."""
        text = "(ROOT\n  (S (NP (DT The)   (NN dog))\n     (VP (VBD ran))))"

        assert serialize_tree(parse_tree_from_bracketed(text)) == normalize_bracketed(text) == DOG

    def test_base_label(self):
        """Test function tag stripping."""
        assert base_label("NP-SBJ-1") == "NP"
        assert base_label("PP=2") == "PP"
        assert base_label("-NONE-") == "-NONE-"


class TestTreeFeatures:
    """Test individual tree features."""

    def test_longest_path_single_terminal(self):
        """Test a single terminal under the root."""
        assert longest_path(parse_tree_from_bracketed("(ROOT hello)")) == 1

    def test_longest_path(self):
        """Test ROOT, S, NP, DT down to the leaf."""
        assert longest_path(parse_tree_from_bracketed(DOG)) == 4

    def test_pp_percentage(self):
        """Test one PP among S, NP, VP and PP."""
        assert pp_percentage(parse_tree_from_bracketed(SAT)) == 25.0

    def test_no_pp(self):
        """Test a tree without prepositional phrases."""
        assert pp_percentage(parse_tree_from_bracketed(DOG)) == 0.0

    def test_function_tags_count(self):
        """Test that PP-LOC counts as PP."""
        tree = parse_tree_from_bracketed("(ROOT (S (NP (PRP He)) (VP (VBD sat) (PP-LOC (IN down)))))")

        assert pp_percentage(tree) == 25.0

    def test_clause_count(self):
        """Test counting S nodes, embedded ones included."""
        tree = parse_tree_from_bracketed(
            "(ROOT (S (NP (NNP Jo)) (VP (VBD said) (SBAR (IN that) (S (NP (PRP it)) (VP (VBD rained)))))))"
        )

        assert clause_count(tree) == 2.0

    def test_branching_factor(self):
        """Test the mean number of children of phrasal nodes."""
        assert mean_branching_factor(parse_tree_from_bracketed(DOG)) == pytest.approx((2 + 2 + 1) / 3)

    def test_type_token_ratio(self):
        """Test case-insensitive distinct-word share."""
        assert type_token_ratio("The cat saw the dog.") == pytest.approx(4 / 5)
        assert type_token_ratio("...") == 0.0

    def test_random_trees_against_brute_force(self):
        """Test longest path and PP share on random trees against direct traversal."""
        rng = np.random.default_rng(42)
        for _ in range(200):
            tree = Tree("ROOT", [_random_tree(rng)])
            parsed = parse_tree_from_bracketed(serialize_tree(tree))
            labels = _phrasal_labels(tree, [])
            expected_pp = 100.0 * labels.count("PP") / len(labels) if labels else 0.0

            assert longest_path(parsed) == _depth(tree)
            assert pp_percentage(parsed) == pytest.approx(expected_pp)


class TestFeatureVector:
    """Test the feature registry and vectors."""

    def test_registry(self):
        """Test that sixteen features are registered in a fixed order."""
        assert len(FEATURE_REGISTRY) == 16
        assert list(FEATURE_REGISTRY)[:3] == ["words_per_sentence", "pp_percentage", "longest_parse_path"]

    def test_registry_hash_pinned(self):
        """Test that the registry hash only changes with the registry."""
        assert registry_signature().startswith("v1|words_per_sentence:text|pp_percentage:tree|")
        assert registry_hash() == "19f94693506fa5cfa46437f6b3e524db9a1ed4b68142b4663b5d95a8d244059b"

    def test_words_per_sentence(self):
        """Test that punctuation-only tokens are not counted."""
        vector = vector_from_text("s", 0, "She sat down again.")

        assert vector.values["words_per_sentence"] == 4

    def test_tree_features_absent_without_parse(self):
        """Test that missing parses mark tree features absent instead of zero."""
        vector = vector_from_text("s", 0, "She sat down again.")

        tree_features = [n for n, spec in FEATURE_REGISTRY.items() if spec.source == "tree"]
        assert vector.absent == tree_features
        assert not set(tree_features) & set(vector.values)

    def test_unreadable_parse_is_absent(self):
        """Test that a malformed parse does not fail the vector."""
        vector = vector_from_text("s", 0, "He sat down.", "((")

        assert "pp_percentage" in vector.absent

    def test_full_vector(self, make_record):
        """Test a record with a parse."""
        vector = feature_vector(make_record("He sat down.", author=2, parse=SAT), "real-0")

        assert vector.absent == []
        assert vector.author == 2
        assert vector.values["pp_percentage"] == 25.0
        assert vector.values["longest_parse_path"] == 5.0
        assert vector.values["char_length"] == 12.0

    def test_demo_vectors_finite(self, demo_corpus):
        """Test that every demo sentence yields a complete finite vector."""
        for i, record in enumerate(demo_corpus.records[:100]):
            vector = feature_vector(record, str(i))
            assert vector.absent == []
            assert all(math.isfinite(v) for v in vector.values.values())

    def test_resolve_features(self):
        """Test feature selection."""
        assert resolve_features("all") == list(FEATURE_REGISTRY)
        assert resolve_features(["pp_percentage"]) == ["pp_percentage"]
        with pytest.raises(ValueError):
            resolve_features(["syllables"])

    def test_sidecar_provider(self):
        """Test parse lookup by sentence text."""
        provider = SidecarParseProvider({"He sat down.": SAT})

        assert provider.parse("He sat down.") == SAT
        assert provider.parse("Unknown.") is None


def _vectors(values, feature="longest_parse_path", author=0):
    return [FeatureVector(sentence_id=str(i), author=author, values={feature: float(v)}) for i, v in enumerate(values)]


class TestDivergence:
    """Test histograms and Jensen-Shannon divergence."""

    def test_identical(self):
        """Test that identical histograms have zero divergence."""
        assert js_divergence([3, 1, 0, 2], [3, 1, 0, 2]) == pytest.approx(0.0, abs=1e-12)

    def test_disjoint(self):
        """Test that disjoint supports reach ln 2."""
        assert js_divergence([5, 0, 0], [0, 0, 7]) == pytest.approx(math.log(2))

    def test_symmetric_and_bounded(self):
        """Test symmetry and bounds on random histograms."""
        rng = np.random.default_rng(1)
        for _ in range(50):
            p, q = rng.integers(0, 10, 8) + 1, rng.integers(0, 10, 8)
            value = js_divergence(p, q + 1)
            assert 0.0 <= value <= math.log(2)
            assert value == pytest.approx(js_divergence(q + 1, p))

    def test_scale_invariant(self):
        """Test that only proportions matter."""
        assert js_divergence([1, 2, 3], [3, 2, 1]) == pytest.approx(js_divergence([10, 20, 30], [3, 2, 1]))

    def test_shared_edges(self):
        """Test equal-width edges over the pooled range."""
        np.testing.assert_allclose(shared_edges([0.0, 10.0], bins=5), [0, 2, 4, 6, 8, 10])

    def test_degenerate_edges(self):
        """Test that a constant feature gets a unit-wide range."""
        np.testing.assert_allclose(shared_edges([3.0, 3.0], bins=2), [2.5, 3.0, 3.5])

    def test_compare_identical_populations(self):
        """Test that identical populations share edges and have zero divergence."""
        values = [3, 4, 4, 5, 6, 6, 6, 9]

        comparison = compare(_vectors(values), _vectors(values), "longest_parse_path", bins=4)

        assert comparison.real.edges == comparison.generated.edges
        assert comparison.real.counts == comparison.generated.counts
        assert comparison.real.size == 8
        assert comparison.divergence == pytest.approx(0.0, abs=1e-12)

    def test_compare_disjoint_populations(self):
        """Test that separated populations reach the maximum."""
        comparison = compare(_vectors([1, 1, 2]), _vectors([9, 10, 10]), "longest_parse_path", bins=4)

        assert comparison.divergence == pytest.approx(math.log(2))

    def test_compare_empty_population(self):
        """Test that a population without values is refused."""
        with pytest.raises(ValueError):
            compare(_vectors([1, 2]), [], "longest_parse_path")

    def test_populations_per_author(self):
        """Test pooled plus per-author comparisons, skipping empty groups."""
        real = _vectors([1, 2, 3]) + _vectors([4, 5], author=1)
        generated = _vectors([2, 3]) + _vectors([7], author=3)

        comparisons = compare_populations(real, generated, ["longest_parse_path"], bins=3, authors=[0, 1, 3])

        assert [c.author for c in comparisons] == [None, 0]
        assert comparisons[0].real.size == 5
        assert comparisons[0].generated.size == 3


def _generated_vectors(handle, count: int = 100):
    scheme = handle.scheme
    vectors = []
    for index in range(count):
        author = index % 5
        raw = generate(handle, Seed(author=author), GenerationConfig(max_new_tokens=48, rng_seed=index))
        body = raw.text[len(scheme.tag_for(author)):].split(scheme.end_tag)[0].strip()
        vectors.append(vector_from_text(str(index), author, body))
    return vectors


@pytest.mark.slow
class TestTrainedGeneratorDivergence:
    """Test that fine-tuning moves generated sentence lengths toward the real ones."""

    def test_fft_closer_than_untrained(self, trained_generator, demo_corpus):
        """Test that the fine-tuned generator has lower words_per_sentence divergence than an untrained one."""
        config = ReferenceModelConfig(layers=2, heads=2, embed_dim=32, vocab=400, context=64)
        untrained, _ = prepare_generator(
            ReferenceBackend(), demo_corpus, config, TrainingHyper(pretrain_epochs=0), seed=0
        )
        real = [feature_vector(r, str(i)) for i, r in enumerate(demo_corpus.records)]

        tuned = compare(real, _generated_vectors(trained_generator), "words_per_sentence", bins=10)
        fresh = compare(real, _generated_vectors(untrained), "words_per_sentence", bins=10)

        assert tuned.divergence < fresh.divergence
