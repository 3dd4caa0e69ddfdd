"""
Test configuration and fixtures.
"""

from pathlib import Path

import pytest

from app.repositories import read_parse_sidecar
from app.schemas import (
    Corpus,
    DetectorHyper,
    ReferenceModelConfig,
    SentenceRecord,
    TagScheme,
    TrainingHyper,
    default_scheme,
)
from app.services.backend import ModelHandle, ReferenceBackend
from app.services.corpus import build_corpus, load_documents, split_corpus
from app.services.detector import train_detector
from app.services.generation import fine_tune, prepare_generator
from app.utils.demo import write_demo_corpus


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow end-to-end tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def scheme() -> TagScheme:
    return default_scheme()


@pytest.fixture
def backend() -> ReferenceBackend:
    return ReferenceBackend()


@pytest.fixture
def tiny_model_config() -> ReferenceModelConfig:
    """Two layers, two heads; small enough for exact gradient checks."""
    return ReferenceModelConfig(layers=2, heads=2, embed_dim=16, vocab=300, context=32)


@pytest.fixture
def make_record():
    """Factory for sentence records with sensible defaults."""

    def _make(text: str, author: int = 0, split: str = "train", parse=None) -> SentenceRecord:
        return SentenceRecord(
            text=text,
            author=author,
            split=split,
            source_doc=f"doc{author}.txt",
            parse=parse,
            word_count=max(1, len(text.split())),
        )

    return _make


@pytest.fixture(scope="session")
def demo_root(tmp_path_factory) -> Path:
    """Demo corpus on disk: ``raw/<Author>/part*.txt`` plus ``parses.jsonl``."""
    root = tmp_path_factory.mktemp("demo")
    write_demo_corpus(root, sentences_per_author=60, seed=0)
    return root


@pytest.fixture(scope="session")
def demo_corpus(demo_root: Path) -> Corpus:
    scheme = default_scheme()
    corpus = build_corpus(
        load_documents(demo_root / "raw", scheme),
        scheme,
        parses=read_parse_sidecar(demo_root / "parses.jsonl"),
    )
    return split_corpus(corpus, test_fraction=0.2, rng_seed=0)


@pytest.fixture(scope="session")
def trained_generator(demo_corpus: Corpus) -> ModelHandle:
    """Small causal model fine-tuned on the demo corpus."""
    backend = ReferenceBackend()
    config = ReferenceModelConfig(layers=2, heads=2, embed_dim=32, vocab=400, context=64)
    hyper = TrainingHyper(epochs=8, batch_size=16, learning_rate=3e-3)
    base, _ = prepare_generator(backend, demo_corpus, config, hyper, seed=0)
    handle, _ = fine_tune(backend, base, demo_corpus, "fft", hyper)
    return handle


@pytest.fixture(scope="session")
def trained_detector(demo_corpus: Corpus) -> ModelHandle:
    backend = ReferenceBackend()
    config = ReferenceModelConfig(layers=2, heads=2, embed_dim=32, vocab=400, context=64)
    hyper = DetectorHyper(epochs=6, patience=3, batch_size=16, learning_rate=3e-3)
    detector, _ = train_detector(backend, demo_corpus, hyper, config, seed=0)
    return detector


@pytest.fixture(scope="session")
def calibrated_detector(demo_corpus: Corpus) -> ModelHandle:
    """Briefly trained classifier with smoothed labels, used for attribution completeness."""
    backend = ReferenceBackend()
    config = ReferenceModelConfig(layers=2, heads=2, embed_dim=32, vocab=400, context=64)
    hyper = DetectorHyper(
        epochs=2, patience=2, batch_size=16, learning_rate=1e-3, weight_decay=0.1, label_smoothing=0.2
    )
    detector, _ = train_detector(backend, demo_corpus, hyper, config, seed=0)
    return detector


@pytest.fixture(scope="session")
def calibrated_generator(demo_corpus: Corpus) -> ModelHandle:
    """Briefly pre-trained and fine-tuned causal model, used for attribution completeness."""
    backend = ReferenceBackend()
    config = ReferenceModelConfig(layers=2, heads=2, embed_dim=32, vocab=400, context=64)
    hyper = TrainingHyper(epochs=1, batch_size=16, learning_rate=1e-3, weight_decay=0.1, pretrain_epochs=1)
    base, _ = prepare_generator(backend, demo_corpus, config, hyper, seed=0)
    handle, _ = fine_tune(backend, base, demo_corpus, "fft", hyper)
    return handle
