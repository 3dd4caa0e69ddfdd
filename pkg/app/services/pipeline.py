"""
Pipeline stages.

Every stage reads declared input files, writes its outputs into ``<out>/<stage>/``
through a ``StageWorkspace`` and records a ``RunManifest`` with input and output hashes.
"""

import csv
import json
import os
import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import structlog

from app.core.config import settings
from app.core.exceptions import ConfigError, EmptyQuerySetError, StageFailure
from app.repositories import (
    CorpusRepository,
    GeneratedRepository,
    ManifestRepository,
    PredictionRepository,
    StageWorkspace,
    hash_tree,
    read_parse_sidecar,
    sha256_bytes,
    sha256_file,
    write_json,
    write_jsonl,
)
from app.schemas import (
    STAGE_ORDER,
    AttributionMatrix,
    Corpus,
    EnrichmentProfile,
    FeatureComparison,
    FeatureVector,
    GenerationConfig,
    PipelineConfig,
    RunManifest,
    TagScheme,
    TokenRanking,
    default_scheme,
)
from app.services.backend import ModelHandle, get_backend, load_handle, resolve_device
from app.services.corpus import build_corpus, build_manifest, load_documents, split_corpus
from app.services.detector import (
    agreement_matrix,
    confidence_filter,
    evaluate_real_test_set,
    summarize,
    threshold_sweep,
    train_detector,
)
from app.services.generation import (
    build_seed_vocabulary,
    draw_seed,
    fine_tune,
    generate,
    generate_batch,
    item_rng,
    prepare_generator,
)
from app.services.synfeat import (
    ParseProvider,
    SidecarParseProvider,
    compare_populations,
    registry_hash,
    resolve_features,
    vector_from_text,
)
from app.services.xai import (
    average_profiles,
    classifier_token_ranking,
    generation_profile,
    tag_attribution_heatmap,
)

logger = structlog.get_logger(__name__)

PathLike = Union[str, Path]
SWEEP_THRESHOLDS = [i / 100 for i in range(100)]
EXPLANATIONS = ("ae", "ig-gen", "ig-cls")


# Stage runner


def hash_inputs(inputs: Dict[str, PathLike]) -> Dict[str, str]:
    """SHA-256 per declared input; directories hash their sorted file listing."""
    hashes = {}
    for name, value in inputs.items():
        path = Path(value)
        if path.is_file():
            hashes[name] = sha256_file(path)
        elif path.is_dir():
            listing = json.dumps(hash_tree(path), sort_keys=True)
            hashes[name] = sha256_bytes(listing.encode("utf-8"))
        else:
            raise ConfigError("input path not found", input=name, path=str(path))
    return hashes


def run_stage(
    stage: str,
    out_dir: PathLike,
    body: Callable[[Path], None],
    inputs: Dict[str, PathLike],
    config: Optional[Dict[str, Any]] = None,
    rng_seeds: Optional[Dict[str, int]] = None,
    backend: str = "reference",
    deterministic: bool = True,
) -> RunManifest:
    """
    Run one stage body inside a workspace and record its manifest.

    A failed stage leaves ``<out>/<stage>`` as it was and writes
    ``<out>/<stage>.failed.json``.

    Raises:
        StageFailure: the body or its input checks raised
    """
    out_dir = Path(out_dir)
    manifests = ManifestRepository(out_dir)
    manifest = RunManifest(
        stage=stage,
        config=config or {},
        backend=backend,
        rng_seeds=rng_seeds or {},
        deterministic=deterministic,
    )
    started = time.perf_counter()
    with structlog.contextvars.bound_contextvars(stage=stage):
        logger.info("Stage started", out_dir=str(out_dir))
        try:
            manifest.input_hashes = hash_inputs(inputs)
            with StageWorkspace(out_dir / stage) as work:
                body(work)
                manifest.output_hashes = hash_tree(work)
                manifest.wall_time_s = round(time.perf_counter() - started, 3)
                manifests.write(work, manifest)
        except Exception as exc:
            manifest.status = "failed"
            manifest.error = str(exc)
            manifest.wall_time_s = round(time.perf_counter() - started, 3)
            out_dir.mkdir(parents=True, exist_ok=True)
            path = manifests.write_failure(manifest)
            logger.error("Stage failed", error=str(exc), manifest=str(path))
            raise StageFailure(stage, exc, str(path)) from exc
        manifests.clear_failure(stage)
        logger.info("Stage finished", outputs=len(manifest.output_hashes), wall_time_s=manifest.wall_time_s)
    return manifest


def _on_cpu() -> bool:
    return resolve_device().type == "cpu"


def load_scheme(path: Optional[str]) -> TagScheme:
    return TagScheme.load(path) if path else default_scheme()


def load_corpus(path: PathLike) -> Corpus:
    return CorpusRepository.from_file(path).load()


# corpus


def corpus_stage(config: PipelineConfig) -> RunManifest:
    """Raw documents to a split, tagged sentence corpus."""
    section = config.corpus
    inputs: Dict[str, PathLike] = {"input_dir": section.input_dir}
    if section.scheme:
        inputs["scheme"] = section.scheme
    if section.parses:
        inputs["parses"] = section.parses

    def body(work: Path) -> None:
        scheme = load_scheme(section.scheme)
        markers = [(m.start, m.end) for m in section.markers] if section.markers else None
        parses = read_parse_sidecar(section.parses) if section.parses else None
        corpus = build_corpus(
            load_documents(section.input_dir, scheme),
            scheme,
            min_words=section.min_words,
            max_words=section.max_words,
            strict=section.strict_markers,
            markers=markers,
            parses=parses,
        )
        corpus = split_corpus(corpus, section.test_fraction, config.seed)
        repo = CorpusRepository(work)
        repo.save(corpus)
        write_json(
            repo.manifest_path,
            build_manifest(corpus, sha256_file(repo.records_path), section.test_fraction, config.seed),
        )

    return run_stage(
        "corpus",
        config.out_dir,
        body,
        inputs,
        config=section.model_dump(mode="json"),
        rng_seeds={"split": config.seed},
        backend="none",
    )


# finetune


def finetune_stage(
    config: PipelineConfig,
    corpus_path: Optional[PathLike] = None,
    targets: Sequence[str] = ("generator", "detector"),
) -> RunManifest:
    """
    Train the base generator, its FFT/LoRA fine-tunes and the style classifier.

    Checkpoints go to ``base/``, ``<method>/`` and ``detector/``.
    """
    corpus_path = Path(corpus_path or Path(config.out_dir) / "corpus")
    backend = get_backend(config.backend)

    def body(work: Path) -> None:
        corpus = load_corpus(corpus_path)
        if "generator" in targets:
            base, pretrain = prepare_generator(
                backend, corpus, config.model, config.finetune, seed=config.seed
            )
            backend.save(base, work / "base", training=pretrain.model_dump(mode="json") if pretrain else None)
            for method in config.finetune.methods:
                handle, report = fine_tune(backend, base, corpus, method, config.finetune)
                backend.save(handle, work / method, training=report.model_dump(mode="json"))
                write_json(work / f"training_{method}.json", report)
        if "detector" in targets:
            detector, report = train_detector(backend, corpus, config.detector, config.model, seed=config.seed)
            backend.save(detector, work / "detector", training=report.training.model_dump(mode="json"))
            write_json(work / "detector_report.json", report)

    return run_stage(
        "finetune",
        config.out_dir,
        body,
        {"corpus": corpus_path},
        config={
            "targets": list(targets),
            "model": config.model.model_dump(mode="json"),
            "finetune": config.finetune.model_dump(mode="json"),
            "detector": config.detector.model_dump(mode="json"),
        },
        rng_seeds={"init": config.seed, "finetune": config.finetune.seed, "detector": config.detector.seed},
        backend=backend.name,
        deterministic=_on_cpu(),
    )


# generate


def generation_config(config: PipelineConfig, rng_seed: Optional[int] = None, retain_trace: bool = False) -> GenerationConfig:
    section = config.generate
    return GenerationConfig(
        temperature=section.temperature,
        max_new_tokens=section.max_new_tokens,
        sample=section.sample,
        rng_seed=config.seed if rng_seed is None else rng_seed,
        retain_trace=retain_trace,
    )


def generate_stage(
    config: PipelineConfig,
    corpus_path: Optional[PathLike] = None,
    models_dir: Optional[PathLike] = None,
    methods: Optional[Sequence[str]] = None,
) -> RunManifest:
    """``per_author`` accepted sentences per author from every fine-tuned generator."""
    corpus_path = Path(corpus_path or Path(config.out_dir) / "corpus")
    models_dir = Path(models_dir or Path(config.out_dir) / "finetune")
    methods = list(methods or config.finetune.methods)
    section = config.generate

    def body(work: Path) -> None:
        corpus = load_corpus(corpus_path)
        vocabulary = build_seed_vocabulary(corpus, section.seed_vocabulary_size)
        write_json(work / "seed_vocabulary.json", vocabulary)
        plan = {author: section.per_author for author in corpus.scheme.indices}
        repo = GeneratedRepository(work)
        for method in methods:
            handle = load_handle(models_dir / method)
            generated = generate_batch(
                handle, plan, vocabulary, generation_config(config), section.retry_factor, method
            )
            repo.save(generated)

    return run_stage(
        "generate",
        config.out_dir,
        body,
        {"corpus": corpus_path, **{method: models_dir / method for method in methods}},
        config={"methods": methods, **section.model_dump(mode="json")},
        rng_seeds={"batch": config.seed},
        backend=config.backend or settings.STYLEFORGE_BACKEND,
        deterministic=_on_cpu(),
    )


# evaluate


def _confidence_row(name: str, report: Any) -> Dict[str, Any]:
    return {
        "name": name,
        "retained": report.retained,
        "total": report.total,
        "retained_fraction": report.retained_fraction,
        "avg_confidence": report.avg_confidence,
        "avg_accuracy": report.avg_accuracy,
    }


def evaluate_stage(
    config: PipelineConfig,
    corpus_path: Optional[PathLike] = None,
    detector_dir: Optional[PathLike] = None,
    generated_files: Optional[Sequence[PathLike]] = None,
) -> RunManifest:
    """
    Classify real test sentences and every generated set; write agreement matrices,
    confidence-filtered reports and threshold sweeps.
    """
    corpus_path = Path(corpus_path or Path(config.out_dir) / "corpus")
    detector_dir = Path(detector_dir or Path(config.out_dir) / "finetune" / "detector")
    if generated_files is None:
        generate_dir = Path(config.out_dir) / "generate"
        generated_files = sorted(generate_dir.glob("generated_*.jsonl")) if generate_dir.is_dir() else []
    files = [Path(p) for p in generated_files]
    threshold = config.evaluate.threshold

    def body(work: Path) -> None:
        detector = load_handle(detector_dir)
        corpus = load_corpus(corpus_path)
        repo = PredictionRepository(work)
        real = evaluate_real_test_set(detector, corpus)
        real_filtered = confidence_filter(real, threshold)
        repo.save("real_test", real, filtered=real_filtered)
        summary = summarize(real, len(corpus.scheme.authors))
        write_json(work / "real_test" / "summary.json", summary)
        rows = [_confidence_row("real_test", real_filtered)]
        for path in files:
            generated = GeneratedRepository.load_file(path)
            matrix, predictions = agreement_matrix(detector, generated)
            filtered = confidence_filter(predictions, threshold)
            repo.save(generated.method, predictions, matrix, filtered)
            write_json(
                work / generated.method / "threshold_sweep.json",
                [p.model_dump(mode="json") for p in threshold_sweep(predictions, SWEEP_THRESHOLDS)],
            )
            rows.append(_confidence_row(generated.method, filtered))
        write_json(work / "confidence_table.json", {"threshold": threshold, "rows": rows, "accuracy": summary.accuracy})

    return run_stage(
        "evaluate",
        config.out_dir,
        body,
        {"corpus": corpus_path, "detector": detector_dir, **{p.name: p for p in files}},
        config=config.evaluate.model_dump(mode="json"),
        backend=config.backend or settings.STYLEFORGE_BACKEND,
    )


# synfeat


def write_divergence_csv(path: Path, comparisons: Dict[str, List[FeatureComparison]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["method", "feature", "author", "divergence", "real_n", "generated_n"])
        for method, items in comparisons.items():
            for c in items:
                writer.writerow([
                    method,
                    c.feature,
                    "" if c.author is None else c.author,
                    f"{c.divergence:.10f}",
                    c.real.size,
                    c.generated.size,
                ])


def synfeat_stage(
    config: PipelineConfig,
    corpus_path: Optional[PathLike] = None,
    generated_files: Optional[Sequence[PathLike]] = None,
) -> RunManifest:
    """Feature vectors for real and generated sentences, histograms and divergences."""
    corpus_path = Path(corpus_path or Path(config.out_dir) / "corpus")
    if generated_files is None:
        generate_dir = Path(config.out_dir) / "generate"
        generated_files = sorted(generate_dir.glob("generated_*.jsonl")) if generate_dir.is_dir() else []
    files = [Path(p) for p in generated_files]
    section = config.synfeat
    inputs: Dict[str, PathLike] = {"corpus": corpus_path, **{p.name: p for p in files}}
    if section.generated_parses:
        inputs["generated_parses"] = section.generated_parses

    def body(work: Path) -> None:
        features = resolve_features(section.features)
        corpus = load_corpus(corpus_path)
        provider: ParseProvider = SidecarParseProvider(
            read_parse_sidecar(section.generated_parses) if section.generated_parses else {}
        )
        real = [
            vector_from_text(f"real-{i}", r.author, r.text, r.parse) for i, r in enumerate(corpus.records)
        ]
        vectors: List[FeatureVector] = list(real)
        comparisons: Dict[str, List[FeatureComparison]] = {}
        for path in files:
            generated = GeneratedRepository.load_file(path)
            gen = [
                vector_from_text(f"{generated.method}-{item.author}-{i}", item.author, item.text, provider.parse(item.text))
                for i, item in enumerate(generated.items)
            ]
            vectors.extend(gen)
            comparisons[generated.method] = compare_populations(
                real, gen, features, section.bins, corpus.scheme.indices
            )
        write_jsonl(work / "features.jsonl", vectors)
        write_json(
            work / "histograms.json",
            {
                "registry_hash": registry_hash(),
                "bins": section.bins,
                "comparisons": {m: [c.model_dump(mode="json") for c in items] for m, items in comparisons.items()},
            },
        )
        write_divergence_csv(work / "divergence.csv", comparisons)

    return run_stage(
        "synfeat",
        config.out_dir,
        body,
        inputs,
        config={"registry_hash": registry_hash(), **section.model_dump(mode="json")},
        backend="none",
    )


# explain


def sample_generations(
    handle: ModelHandle, corpus: Corpus, config: PipelineConfig, count: int, stream: int
) -> List[Any]:
    """Traced generations cycling through the authors; ``stream`` separates seed streams."""
    vocabulary = build_seed_vocabulary(corpus, config.generate.seed_vocabulary_size)
    authors = corpus.scheme.indices
    generations = []
    for i in range(count):
        author = authors[i % len(authors)]
        rng = item_rng(config.seed + stream, author, i, 0)
        seed = draw_seed(author, vocabulary, rng)
        sample_config = generation_config(config, int(rng.integers(2**31 - 1)), retain_trace=True)
        generations.append(generate(handle, seed, sample_config))
    return generations


def attention_enrichment(
    handle: ModelHandle, corpus: Corpus, config: PipelineConfig
) -> Tuple[Dict[str, EnrichmentProfile], List[Dict[str, Any]]]:
    """Per-tag averaged profiles plus the maximum layer enrichment of every generation."""
    by_tag: Dict[str, List[EnrichmentProfile]] = {}
    per_generation = []
    for i, raw in enumerate(sample_generations(handle, corpus, config, config.explain.ae_generations, stream=1)):
        try:
            profile = generation_profile(handle, raw)
        except EmptyQuerySetError:
            logger.warning("Generation without steps after the tag skipped", index=i)
            continue
        by_tag.setdefault(profile.tag or "", []).append(profile)
        per_generation.append(
            {
                "index": i,
                "author": raw.seed.author,
                "max_enrichment": max(layer.enrichment for layer in profile.layers),
            }
        )
    return {tag: average_profiles(items) for tag, items in sorted(by_tag.items())}, per_generation


def write_enrichment_csv(path: Path, profiles: Dict[str, EnrichmentProfile]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["layer", "tag", "mass", "enrichment"])
        for tag, profile in profiles.items():
            for layer in profile.layers:
                writer.writerow([layer.layer, tag, f"{layer.to_tag_mass:.10f}", f"{layer.enrichment:.10f}"])


def explain_stage(
    config: PipelineConfig,
    corpus_path: Optional[PathLike] = None,
    generator_dir: Optional[PathLike] = None,
    detector_dir: Optional[PathLike] = None,
    analyses: Sequence[str] = EXPLANATIONS,
) -> RunManifest:
    """Attention enrichment, generator tag heatmaps and classifier token rankings."""
    section = config.explain
    corpus_path = Path(corpus_path or Path(config.out_dir) / "corpus")
    generator_dir = Path(generator_dir or Path(config.out_dir) / "finetune" / section.method)
    detector_dir = Path(detector_dir or Path(config.out_dir) / "finetune" / "detector")
    unknown = [a for a in analyses if a not in EXPLANATIONS]
    if unknown:
        raise ConfigError("unknown analysis", analyses=unknown)
    inputs: Dict[str, PathLike] = {"corpus": corpus_path}
    if "ae" in analyses or "ig-gen" in analyses:
        inputs["generator"] = generator_dir
    if "ig-cls" in analyses:
        inputs["detector"] = detector_dir

    def body(work: Path) -> None:
        corpus = load_corpus(corpus_path)
        generator = load_handle(generator_dir) if "generator" in inputs else None
        if generator is not None and "ae" in analyses:
            profiles, per_generation = attention_enrichment(generator, corpus, config)
            above = [g for g in per_generation if g["max_enrichment"] > 1.0]
            write_json(
                work / "enrichment.json",
                {
                    "method": section.method,
                    "profiles": {tag: p.model_dump(mode="json") for tag, p in profiles.items()},
                    "generations": per_generation,
                    "share_max_above_one": len(above) / len(per_generation) if per_generation else None,
                },
            )
            write_enrichment_csv(work / "enrichment.csv", profiles)
        if generator is not None and "ig-gen" in analyses:
            heatmaps: List[AttributionMatrix] = []
            for raw in sample_generations(generator, corpus, config, section.ig_generations, stream=2):
                if raw.generated_ids:
                    heatmaps.append(tag_attribution_heatmap(generator, raw, section.steps))
            write_json(work / "ig_heatmaps.json", [h.model_dump(mode="json") for h in heatmaps])
        if "ig-cls" in analyses:
            detector = load_handle(detector_dir)
            rankings: List[TokenRanking] = []
            for author in corpus.scheme.indices:
                records = corpus.select("test", author) or corpus.select("train", author)
                rankings.append(
                    classifier_token_ranking(
                        detector, records[: section.ig_sentences], author, section.steps, section.top_k
                    )
                )
            write_json(work / "top_tokens.json", [r.model_dump(mode="json") for r in rankings])

    return run_stage(
        "explain",
        config.out_dir,
        body,
        inputs,
        config={"analyses": list(analyses), **section.model_dump(mode="json")},
        rng_seeds={"ae": config.seed + 1, "ig_gen": config.seed + 2},
        backend=config.backend or settings.STYLEFORGE_BACKEND,
        deterministic=_on_cpu(),
    )


STAGES: Dict[str, Callable[[PipelineConfig], RunManifest]] = {
    "corpus": corpus_stage,
    "finetune": finetune_stage,
    "generate": generate_stage,
    "evaluate": evaluate_stage,
    "synfeat": synfeat_stage,
    "explain": explain_stage,
}


def run_pipeline(
    config: Union[PipelineConfig, PathLike], stages: Optional[Sequence[str]] = None
) -> Dict[str, RunManifest]:
    """
    Run stages in dependency order; the first failure stops the run and keeps the
    outputs of earlier stages.

    Raises:
        ConfigError: the config cannot be loaded or names an unknown stage
        StageFailure: a stage failed
    """
    if not isinstance(config, PipelineConfig):
        config = PipelineConfig.load(config)
    selected = list(stages or STAGE_ORDER)
    unknown = [s for s in selected if s not in STAGES]
    if unknown:
        raise ConfigError("unknown stage", stages=unknown)
    os.environ.setdefault("TOKENIZERS_PARALLELISM", "false")
    logger.info("Pipeline started", stages=selected, out_dir=config.out_dir, seed=config.seed)
    manifests = {}
    for stage in STAGE_ORDER:
        if stage in selected:
            manifests[stage] = STAGES[stage](config)
    logger.info("Pipeline finished", stages=list(manifests))
    return manifests
