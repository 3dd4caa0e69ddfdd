"""
Style classifier training and the agreement/confidence evaluation protocol.
"""

import copy
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog
import torch
from scipy.special import softmax
from scipy.stats import binomtest
from sklearn.metrics import accuracy_score, confusion_matrix, f1_score

from app.core.exceptions import EmptySentenceError, MissingAuthorError
from app.schemas import (
    AgreementMatrix,
    AuthorFilterStats,
    ClassificationSummary,
    Corpus,
    DetectorHyper,
    DetectorReport,
    EpochMetrics,
    FilteredReport,
    GeneratedSet,
    Prediction,
    ReferenceModelConfig,
    Split,
    TagScheme,
    ThresholdPoint,
)
from app.services.backend import Backend, ModelHandle, make_batch
from app.services.corpus import check_tag_hygiene
from app.services.training import encode_for_training, fit

logger = structlog.get_logger(__name__)

DEFAULT_THRESHOLD = 0.93


def _encode_sentence(detector: ModelHandle, sentence: str) -> List[int]:
    ids = detector.tokenizer.encode(sentence)
    return ids[: detector.context] or [detector.tokenizer.pad_id]


def _logits(detector: ModelHandle, sequences: Sequence[Sequence[int]]) -> np.ndarray:
    batch = make_batch(sequences, detector.tokenizer.pad_id, device=detector.device)
    detector.module.eval()
    with torch.no_grad():
        out = detector.module(input_ids=batch.input_ids, attention_mask=batch.attention_mask)
    return out.logits.detach().double().cpu().numpy()


def prediction_from_logits(
    logits: np.ndarray, sentence_id: str, expected: int, text: Optional[str] = None
) -> Prediction:
    """Softmax in float64; ties in the argmax go to the lowest author index."""
    probs = softmax(np.asarray(logits, dtype=np.float64))
    predicted = int(np.argmax(probs))
    top = probs[predicted]
    if int(np.sum(probs == top)) > 1:
        logger.info("Argmax tie broken by lowest index", sentence_id=sentence_id, predicted=predicted)
    return Prediction(
        sentence_id=sentence_id,
        probs=[float(p) for p in probs],
        predicted=predicted,
        confidence=float(top),
        expected=expected,
        text=text,
    )


def classify(
    detector: ModelHandle, sentence: str, expected: int = -1, sentence_id: str = "0"
) -> Prediction:
    """
    Class probabilities for one tag-free sentence.

    Raises:
        EmptySentenceError: the sentence is blank
    """
    if not sentence.strip():
        raise EmptySentenceError(sentence_id=sentence_id)
    logits = _logits(detector, [_encode_sentence(detector, sentence)])[0]
    return prediction_from_logits(logits, sentence_id, expected, sentence)


def classify_many(
    detector: ModelHandle,
    sentences: Sequence[str],
    expected: Sequence[int],
    sentence_ids: Optional[Sequence[str]] = None,
    batch_size: int = 64,
) -> List[Prediction]:
    """Batched ``classify``; padding is masked out so results match single calls."""
    ids = list(sentence_ids) if sentence_ids is not None else [str(i) for i in range(len(sentences))]
    predictions: List[Prediction] = []
    for start in range(0, len(sentences), batch_size):
        chunk = sentences[start: start + batch_size]
        for offset, sentence in enumerate(chunk):
            if not sentence.strip():
                raise EmptySentenceError(sentence_id=ids[start + offset])
        logits = _logits(detector, [_encode_sentence(detector, s) for s in chunk])
        for offset, row in enumerate(logits):
            i = start + offset
            predictions.append(prediction_from_logits(row, ids[i], expected[i], sentences[i]))
    return predictions


def summarize(predictions: Sequence[Prediction], num_labels: int) -> ClassificationSummary:
    """Accuracy, macro-F1 and confusion counts (rows expected, columns predicted)."""
    y_true = [p.expected for p in predictions]
    y_pred = [p.predicted for p in predictions]
    labels = list(range(num_labels))
    return ClassificationSummary(
        accuracy=float(accuracy_score(y_true, y_pred)) if predictions else 0.0,
        macro_f1=float(f1_score(y_true, y_pred, labels=labels, average="macro", zero_division=0))
        if predictions else 0.0,
        confusion=confusion_matrix(y_true, y_pred, labels=labels).tolist()
        if predictions else [[0] * num_labels for _ in labels],
        total=len(predictions),
    )


def _real_predictions(detector: ModelHandle, corpus: Corpus, split: Split) -> List[Prediction]:
    records = corpus.select(split)
    return classify_many(
        detector,
        [r.text for r in records],
        [r.author for r in records],
        [f"{split}-{i}" for i in range(len(records))],
    )


def train_detector(
    backend: Backend,
    corpus: Corpus,
    hyper: DetectorHyper,
    model_config: ReferenceModelConfig,
    seed: int = 0,
) -> Tuple[ModelHandle, DetectorReport]:
    """
    Train the style classifier on real train sentences.

    Test accuracy and macro-F1 are measured after every epoch. Training stops at
    ``hyper.epochs`` or after ``hyper.patience`` epochs without a better test
    accuracy; the best epoch's weights are kept.

    Args:
        backend: Backend building the classifier
        corpus: Split corpus; the train split must cover every author
        hyper: Epochs (default 9), patience (default 3), optimiser settings
        model_config: Classifier architecture
        seed: Initialisation seed

    Returns:
        (classifier handle, per-epoch report)
    """
    scheme = corpus.scheme
    train = corpus.select("train")
    check_tag_hygiene(train, scheme)
    for index, count in corpus.counts_by_author("train").items():
        if count == 0:
            raise MissingAuthorError(author=scheme.name_of(index), split="train")

    texts = [r.text for r in train]
    tokenizer = backend.build_tokenizer(texts, scheme, vocab_size=model_config.vocab, kind="classifier")
    detector = backend.make_model("classifier", model_config, tokenizer, scheme, seed=seed)
    detector.method = "detector"
    sequences, _ = encode_for_training(detector, texts)
    labels = [r.author for r in train]
    has_test = bool(corpus.select("test"))
    num_labels = len(scheme.authors)

    epochs: List[EpochMetrics] = []
    best_accuracy = -1.0
    best_epoch = 0
    best_state: Optional[Dict[str, torch.Tensor]] = None
    stale = 0

    def on_epoch(epoch: int, train_loss: float) -> bool:
        nonlocal stale, best_accuracy, best_epoch, best_state
        if not has_test:
            epochs.append(EpochMetrics(epoch=epoch + 1, train_loss=train_loss, test_accuracy=0.0, test_macro_f1=0.0))
            return True
        summary = summarize(_real_predictions(detector, corpus, "test"), num_labels)
        epochs.append(
            EpochMetrics(
                epoch=epoch + 1,
                train_loss=train_loss,
                test_accuracy=summary.accuracy,
                test_macro_f1=summary.macro_f1,
            )
        )
        logger.info("Detector epoch evaluated", epoch=epoch + 1, accuracy=round(summary.accuracy, 4), macro_f1=round(summary.macro_f1, 4))
        if summary.accuracy > best_accuracy:
            best_accuracy = summary.accuracy
            best_epoch = epoch + 1
            best_state = copy.deepcopy(detector.module.state_dict())
            stale = 0
            return True
        stale += 1
        if stale >= hyper.patience:
            logger.info("Early stopping", epoch=epoch + 1, best_epoch=best_epoch)
            return False
        return True

    training = fit(detector, sequences, hyper, "class_label", labels=labels, method="detector", on_epoch=on_epoch)
    if best_state is not None:
        detector.module.load_state_dict(best_state)
    report = DetectorReport(
        training=training,
        epochs=epochs,
        best_epoch=best_epoch if has_test else training.epochs,
        stopped_early=training.epochs < hyper.epochs and hyper.max_steps is None,
    )
    return detector, report


def evaluate_real_test_set(detector: ModelHandle, corpus: Corpus) -> List[Prediction]:
    """Predictions for real test sentences against their true authors."""
    return _real_predictions(detector, corpus, "test")


def classify_generated(detector: ModelHandle, generated: GeneratedSet) -> List[Prediction]:
    """Predictions for generated sentences; the expected author is the seed tag's."""
    ids = [f"{generated.method}-{item.author}-{i}" for i, item in enumerate(generated.items)]
    return classify_many(
        detector, [item.text for item in generated.items], [item.author for item in generated.items], ids
    )


def agreement_from_predictions(
    predictions: Sequence[Prediction], scheme: TagScheme
) -> AgreementMatrix:
    """
    Seed-tag versus predicted-author counts with a one-sided binomial test of the
    agreement rate against chance.
    """
    size = len(scheme.authors)
    counts = np.zeros((size, size), dtype=np.int64)
    for p in predictions:
        counts[p.expected, p.predicted] += 1
    total = int(counts.sum())
    diagonal = int(np.trace(counts))
    rate = diagonal / total if total else None
    pvalue = float(binomtest(diagonal, total, 1.0 / size, alternative="greater").pvalue) if total else None
    return AgreementMatrix(
        counts=counts.tolist(),
        labels=[scheme.name_of(i) for i in scheme.indices],
        total=total,
        agreement_rate=rate,
        binomial_pvalue=pvalue,
    )


def agreement_matrix(
    detector: ModelHandle, generated: GeneratedSet
) -> Tuple[AgreementMatrix, List[Prediction]]:
    """Classify every generated sentence and tabulate agreement with the seed tag."""
    if detector.scheme is None:
        raise ValueError("detector carries no tag scheme")
    predictions = classify_generated(detector, generated)
    matrix = agreement_from_predictions(predictions, detector.scheme)
    logger.info(
        "Agreement computed",
        method=generated.method,
        total=matrix.total,
        agreement_rate=matrix.agreement_rate,
        pvalue=matrix.binomial_pvalue,
    )
    return matrix, predictions


def _mean(values: Sequence[float]) -> Optional[float]:
    return sum(values) / len(values) if values else None


def confidence_filter(
    predictions: Sequence[Prediction], threshold: float = DEFAULT_THRESHOLD
) -> FilteredReport:
    """
    Keep predictions with confidence strictly above the threshold.

    Averages are micro averages over retained predictions; a per-author breakdown
    (by expected author) is included. With nothing retained the averages are None
    and ``undefined`` is set.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    retained = [p for p in predictions if p.confidence > threshold]
    per_author: Dict[int, AuthorFilterStats] = {}
    for author in sorted({p.expected for p in predictions}):
        mine = [p for p in predictions if p.expected == author]
        kept = [p for p in mine if p.confidence > threshold]
        per_author[author] = AuthorFilterStats(
            retained=len(kept),
            total=len(mine),
            avg_confidence=_mean([p.confidence for p in kept]),
            avg_accuracy=_mean([1.0 if p.correct else 0.0 for p in kept]),
        )
    report = FilteredReport(
        threshold=threshold,
        retained=len(retained),
        total=len(predictions),
        retained_fraction=len(retained) / len(predictions) if predictions else None,
        avg_confidence=_mean([p.confidence for p in retained]),
        avg_accuracy=_mean([1.0 if p.correct else 0.0 for p in retained]),
        undefined=not retained,
        per_author=per_author,
    )
    if report.undefined:
        logger.warning("No prediction above threshold", threshold=threshold, total=len(predictions))
    return report


def threshold_sweep(predictions: Sequence[Prediction], thresholds: Sequence[float]) -> List[ThresholdPoint]:
    points = []
    for threshold in thresholds:
        report = confidence_filter(predictions, threshold)
        points.append(
            ThresholdPoint(
                threshold=threshold,
                retained=report.retained,
                avg_confidence=report.avg_confidence,
                avg_accuracy=report.avg_accuracy,
            )
        )
    return points
