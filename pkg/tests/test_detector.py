"""
Style classifier and evaluation protocol tests.
"""

import numpy as np
import pytest

from app.core.exceptions import EmptySentenceError, MissingAuthorError
from app.schemas import DetectorHyper, GeneratedItem, GeneratedSet, Prediction, ReferenceModelConfig, Seed
from app.services.detector import (
    agreement_from_predictions,
    agreement_matrix,
    classify,
    classify_many,
    confidence_filter,
    evaluate_real_test_set,
    prediction_from_logits,
    summarize,
    threshold_sweep,
    train_detector,
)


def _prediction(confidence: float, expected: int, predicted: int, index: int = 0) -> Prediction:
    rest = (1.0 - confidence) / 4
    probs = [rest] * 5
    probs[predicted] = confidence
    return Prediction(
        sentence_id=str(index), probs=probs, predicted=predicted, confidence=confidence, expected=expected
    )


class TestPredictionFromLogits:
    """Test turning logits into predictions."""

    def test_probabilities_normalized(self):
        """Test that probabilities sum to one and the argmax is the prediction."""
        prediction = prediction_from_logits(np.array([0.1, 2.0, -1.0, 0.5, 0.0]), "s", expected=1)

        assert sum(prediction.probs) == pytest.approx(1.0, abs=1e-6)
        assert prediction.predicted == 1
        assert prediction.confidence == pytest.approx(max(prediction.probs))
        assert prediction.correct

    def test_tie_goes_to_lowest_index(self):
        """Test that equal logits resolve to the first author."""
        prediction = prediction_from_logits(np.array([0.0, 3.0, 3.0, 0.0, 0.0]), "s", expected=2)

        assert prediction.predicted == 1
        assert not prediction.correct


class TestConfidenceFilter:
    """Test confidence-filtered agreement."""

    def test_worked_example(self):
        """Test three predictions at the 0.93 threshold."""
        predictions = [_prediction(0.99, 0, 0), _prediction(0.80, 1, 2), _prediction(0.95, 3, 3)]

        report = confidence_filter(predictions, 0.93)

        assert report.retained == 2
        assert report.avg_confidence == pytest.approx(0.97)
        assert report.avg_accuracy == pytest.approx(1.0)
        assert report.retained_fraction == pytest.approx(2 / 3)
        assert not report.undefined

    def test_zero_threshold_keeps_everything(self):
        """Test that threshold zero reduces to plain accuracy."""
        predictions = [_prediction(0.99, 0, 0), _prediction(0.80, 1, 2), _prediction(0.95, 3, 3)]

        report = confidence_filter(predictions, 0.0)

        assert report.retained == report.total == 3
        assert report.avg_accuracy == pytest.approx(2 / 3)

    def test_strictly_above(self):
        """Test that a confidence equal to the threshold is dropped."""
        report = confidence_filter([_prediction(0.93, 0, 0)], 0.93)

        assert report.retained == 0

    def test_nothing_retained(self):
        """Test that an empty selection flags undefined averages."""
        report = confidence_filter([_prediction(0.5, 0, 0), _prediction(0.6, 1, 1)], 0.93)

        assert report.undefined
        assert report.avg_confidence is None
        assert report.avg_accuracy is None

    def test_per_author_breakdown(self):
        """Test the breakdown by expected author."""
        predictions = [_prediction(0.99, 0, 0), _prediction(0.97, 0, 1), _prediction(0.5, 4, 4)]

        report = confidence_filter(predictions, 0.93)

        assert report.per_author[0].retained == 2
        assert report.per_author[0].avg_accuracy == pytest.approx(0.5)
        assert report.per_author[4].retained == 0
        assert report.per_author[4].avg_accuracy is None

    @pytest.mark.parametrize("threshold", [-0.01, 1.5, 93.0])
    def test_threshold_out_of_range(self, threshold):
        """Test that a threshold outside [0, 1] is refused before filtering."""
        with pytest.raises(ValueError, match="threshold"):
            confidence_filter([_prediction(0.99, 0, 0)], threshold)

    def test_threshold_bounds_allowed(self):
        """Test that both ends of the range are valid thresholds."""
        predictions = [_prediction(0.99, 0, 0), _prediction(1.0, 1, 1)]

        assert confidence_filter(predictions, 0.0).retained == 2
        assert confidence_filter(predictions, 1.0).retained == 0

    def test_sweep_monotone(self):
        """Test that raising the threshold never retains more."""
        rng = np.random.default_rng(0)
        predictions = [
            _prediction(float(c), int(e), int(p), i)
            for i, (c, e, p) in enumerate(zip(rng.uniform(0.2, 1.0, 200), rng.integers(5, size=200), rng.integers(5, size=200)))
        ]

        points = threshold_sweep(predictions, [i / 100 for i in range(100)])

        retained = [p.retained for p in points]
        assert retained == sorted(retained, reverse=True)
        assert points[0].retained == 200


class TestAgreement:
    """Test the agreement matrix."""

    def test_oracle_is_diagonal(self, scheme):
        """Test that a detector echoing the seed tag fills only the diagonal."""
        predictions = [_prediction(0.99, a, a, i) for i, a in enumerate([0, 1, 2, 3, 4] * 4)]

        matrix = agreement_from_predictions(predictions, scheme)

        assert matrix.counts == [[4 if i == j else 0 for j in range(5)] for i in range(5)]
        assert matrix.row_sums == [4] * 5
        assert matrix.agreement_rate == pytest.approx(1.0)
        assert matrix.binomial_pvalue < 1e-10
        assert matrix.labels == ["Dickens", "Austen", "Twain", "Alcott", "Melville"]

    def test_chance_level(self, scheme):
        """Test that a uniform confusion is not significant."""
        predictions = [_prediction(0.5, e, p, 5 * e + p) for e in range(5) for p in range(5)]

        matrix = agreement_from_predictions(predictions, scheme)

        assert matrix.total == 25
        assert matrix.diagonal == 5
        assert matrix.binomial_pvalue > 0.4

    def test_empty(self, scheme):
        """Test that no predictions leave the rate undefined."""
        matrix = agreement_from_predictions([], scheme)

        assert matrix.total == 0
        assert matrix.agreement_rate is None


class TestSummarize:
    """Test accuracy, macro-F1 and confusion counts."""

    def test_perfect(self):
        """Test a perfect prediction list."""
        summary = summarize([_prediction(0.9, a, a) for a in range(5)], 5)

        assert summary.accuracy == 1.0
        assert summary.macro_f1 == 1.0
        assert summary.confusion[2][2] == 1

    def test_empty(self):
        """Test that an empty list gives zeros."""
        summary = summarize([], 5)

        assert summary.total == 0
        assert summary.confusion == [[0] * 5 for _ in range(5)]


class TestTrainedDetector:
    """Test the classifier trained on the demo corpus."""

    def test_probabilities(self, trained_detector):
        """Test that probabilities are normalized over the five authors."""
        prediction = classify(trained_detector, "Ahab sighted the whale.", expected=4)

        assert len(prediction.probs) == 5
        assert sum(prediction.probs) == pytest.approx(1.0, abs=1e-6)

    def test_empty_sentence(self, trained_detector):
        """Test that a blank sentence is refused."""
        with pytest.raises(EmptySentenceError):
            classify(trained_detector, "   ")

    def test_batch_matches_single(self, trained_detector):
        """Test that padding in a batch does not change predictions."""
        sentences = ["Ahab sighted the whale.", "Elizabeth admired the handsome letter at the ball."]

        batch = classify_many(trained_detector, sentences, [4, 1])
        single = [classify(trained_detector, s) for s in sentences]

        for b, s in zip(batch, single):
            np.testing.assert_allclose(b.probs, s.probs, atol=1e-5)

    def test_better_than_chance(self, trained_detector, demo_corpus):
        """Test that the classifier separates the demo authors."""
        predictions = evaluate_real_test_set(trained_detector, demo_corpus)

        summary = summarize(predictions, 5)

        assert summary.total == len(demo_corpus.select("test"))
        assert summary.accuracy > 0.5

    def test_agreement_on_generated_set(self, trained_detector):
        """Test agreement over a small generated set."""
        generated = GeneratedSet(
            method="fft",
            items=[
                GeneratedItem(seed=Seed(author=4), author=4, method="fft", text="Ahab struck the whale upon the deck."),
                GeneratedItem(seed=Seed(author=2), author=2, method="fft", text="Huck poked the raft on the river."),
            ],
        )

        matrix, predictions = agreement_matrix(trained_detector, generated)

        assert matrix.total == 2
        assert [p.expected for p in predictions] == [4, 2]
        assert predictions[0].sentence_id == "fft-4-0"

    def test_missing_author(self, backend, demo_corpus):
        """Test that an author without training sentences is refused."""
        partial = demo_corpus.model_copy(update={"records": [r for r in demo_corpus.records if r.author != 0]})

        with pytest.raises(MissingAuthorError):
            train_detector(backend, partial, DetectorHyper(max_steps=1), ReferenceModelConfig(layers=1, heads=1, embed_dim=8, vocab=300, context=32))

    def test_report(self, backend, demo_corpus):
        """Test that early stopping keeps per-epoch metrics."""
        config = ReferenceModelConfig(layers=1, heads=1, embed_dim=8, vocab=300, context=64)

        _, report = train_detector(backend, demo_corpus, DetectorHyper(epochs=2, patience=1, batch_size=64), config)

        assert 1 <= len(report.epochs) <= 2
        assert 1 <= report.best_epoch <= 2
        assert all(0.0 <= e.test_accuracy <= 1.0 for e in report.epochs)
