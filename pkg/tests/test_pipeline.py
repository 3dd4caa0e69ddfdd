"""
Stage runner and end-to-end pipeline tests.
"""

import csv
from pathlib import Path

import pytest
import yaml

from app.core.exceptions import ConfigError, StageFailure
from app.repositories import ManifestRepository, read_json
from app.schemas import (
    STAGE_ORDER,
    DetectorHyper,
    GenerationConfig,
    LoRASettings,
    PipelineConfig,
    ReferenceModelConfig,
    TrainingHyper,
    default_scheme,
)
from app.services.backend import ReferenceBackend
from app.services.corpus import build_corpus, load_documents, split_corpus
from app.services.detector import (
    agreement_matrix,
    confidence_filter,
    evaluate_real_test_set,
    summarize,
    train_detector,
)
from app.services.generation import (
    build_seed_vocabulary,
    fine_tune,
    generate_batch,
    prepare_generator,
)
from app.services.pipeline import hash_inputs, run_pipeline, run_stage, synfeat_stage
from app.services.synfeat import registry_hash
from app.utils.demo import demo_config, write_demo, write_demo_corpus


def _small_config(demo_root, out_dir) -> PipelineConfig:
    data = demo_config(str(out_dir))
    data["model"] = {"layers": 1, "heads": 2, "embed_dim": 16, "vocab": 300, "context": 64}
    data["finetune"].update({"epochs": 1, "max_steps": 4})
    data["detector"].update({"epochs": 1, "max_steps": 4})
    data["generate"].update({"per_author": 2, "max_new_tokens": 12, "retry_factor": 2})
    data["explain"].update({"steps": 4, "ae_generations": 2, "ig_sentences": 2, "top_k": 3})
    return PipelineConfig.model_validate(data).resolve_paths(demo_root)


class TestRunStage:
    """Test the stage workspace, manifests and failure handling."""

    def test_manifest_written(self, tmp_path):
        """Test that a successful stage records its outputs and inputs."""
        source = tmp_path / "input.txt"
        source.write_text("x", encoding="utf-8")

        manifest = run_stage(
            "demo", tmp_path / "out", lambda work: (work / "a.txt").write_text("a", encoding="utf-8"),
            {"source": source}, rng_seeds={"split": 7},
        )

        assert set(manifest.output_hashes) == {"a.txt"}
        assert set(manifest.input_hashes) == {"source"}
        stored = ManifestRepository(tmp_path / "out").read("demo")
        assert stored.rng_seeds == {"split": 7}
        assert stored.status == "ok"

    def test_failure_keeps_previous_outputs(self, tmp_path):
        """Test that a failing rerun leaves earlier outputs and a failure manifest."""
        out = tmp_path / "out"
        run_stage("demo", out, lambda work: (work / "a.txt").write_text("first", encoding="utf-8"), {})

        def broken(work):
            (work / "a.txt").write_text("second", encoding="utf-8")
            raise RuntimeError("boom")

        with pytest.raises(StageFailure) as exc_info:
            run_stage("demo", out, broken, {})

        assert exc_info.value.stage == "demo"
        assert exc_info.value.exit_code == 3
        assert (out / "demo" / "a.txt").read_text(encoding="utf-8") == "first"
        assert read_json(out / "demo.failed.json")["error"] == "boom"
        assert not [p for p in out.iterdir() if p.name.startswith(".demo")]

    def test_success_clears_failure(self, tmp_path):
        """Test that a later success removes the failure manifest."""
        out = tmp_path / "out"
        with pytest.raises(StageFailure):
            run_stage("demo", out, lambda work: 1 / 0, {})

        run_stage("demo", out, lambda work: None, {})

        assert not (out / "demo.failed.json").exists()

    def test_missing_input(self, tmp_path):
        """Test that a missing input fails the stage before the body runs."""
        calls = []

        with pytest.raises(StageFailure) as exc_info:
            run_stage("demo", tmp_path, calls.append, {"corpus": tmp_path / "absent"})

        assert calls == []
        assert isinstance(exc_info.value.cause, ConfigError)

    def test_directory_hash_stable(self, tmp_path):
        """Test that a directory input hashes the same twice and changes with its files."""
        (tmp_path / "d").mkdir()
        (tmp_path / "d" / "f.txt").write_text("1", encoding="utf-8")

        first = hash_inputs({"d": tmp_path / "d"})
        assert hash_inputs({"d": tmp_path / "d"}) == first

        (tmp_path / "d" / "f.txt").write_text("2", encoding="utf-8")
        assert hash_inputs({"d": tmp_path / "d"}) != first


class TestPipeline:
    """Test the full stage chain on the demo corpus."""

    def test_all_stages(self, tmp_path, demo_root):
        """Test that every stage runs and writes the files the next one reads."""
        out = tmp_path / "runs"
        config = _small_config(demo_root, out)

        manifests = run_pipeline(config)

        assert list(manifests) == STAGE_ORDER
        assert all(m.status == "ok" for m in manifests.values())
        for name in ("base", "fft", "lora", "detector"):
            assert (out / "finetune" / name / "config.json").is_file()
        assert (out / "generate" / "generated_fft.jsonl").is_file()
        assert (out / "generate" / "generated_lora.jsonl").is_file()
        table = read_json(out / "evaluate" / "confidence_table.json")
        assert [row["name"] for row in table["rows"]] == ["real_test", "fft", "lora"]
        assert read_json(out / "synfeat" / "histograms.json")["registry_hash"] == registry_hash()
        assert len(read_json(out / "explain" / "top_tokens.json")) == 5
        assert "profiles" in read_json(out / "explain" / "enrichment.json")

    def test_stage_subset(self, tmp_path, demo_root):
        """Test running only the corpus stage."""
        config = _small_config(demo_root, tmp_path / "runs")

        manifests = run_pipeline(config, ["corpus"])

        assert list(manifests) == ["corpus"]
        assert not (tmp_path / "runs" / "finetune").exists()

    def test_unknown_stage(self, tmp_path, demo_root):
        """Test that an unknown stage is refused before anything runs."""
        with pytest.raises(ConfigError):
            run_pipeline(_small_config(demo_root, tmp_path / "runs"), ["corpus", "render"])

        assert not (tmp_path / "runs").exists()

    def test_reruns_are_identical(self, tmp_path, demo_root):
        """Test that rerunning the model-free stages reproduces their outputs."""
        config = _small_config(demo_root, tmp_path / "runs")

        first = run_pipeline(config, ["corpus", "synfeat"])
        second_corpus = run_pipeline(config, ["corpus"])["corpus"]
        second_synfeat = synfeat_stage(config)

        assert second_corpus.output_hashes == first["corpus"].output_hashes
        assert second_synfeat.output_hashes == first["synfeat"].output_hashes

    def test_config_file(self, tmp_path):
        """Test loading the pipeline from YAML with paths relative to the file."""
        path = tmp_path / "configs" / "small.yaml"
        path.parent.mkdir()
        path.write_text(yaml.safe_dump(demo_config(str(tmp_path / "runs"))), encoding="utf-8")

        config = PipelineConfig.load(path)

        assert config.corpus.input_dir == str((tmp_path / "configs" / "raw").resolve())
        assert config.synfeat.generated_parses == str((tmp_path / "configs" / "parses.jsonl").resolve())
        assert config.out_dir == str(tmp_path / "runs")

    def test_study_config_valid(self):
        """Test that the shipped full-scale config validates."""
        config = PipelineConfig.load(Path(__file__).parents[1] / "config" / "study.yaml")

        assert config.backend == "hf"
        assert config.generate.per_author == 5000
        assert config.evaluate.threshold == 0.93
        assert len(config.finetune.lora.targets) == 4


@pytest.mark.slow
class TestDemoRun:
    """Full demo run at its default size."""

    def test_demo_end_to_end(self, tmp_path):
        """Test the demo config from a freshly written corpus."""
        config_path = write_demo(tmp_path)

        manifests = run_pipeline(config_path)

        assert all(m.status == "ok" for m in manifests.values())
        out = tmp_path / "runs"
        assert read_json(out / "finetune" / "training_fft.json")["base_pretrain_epochs"] == 2
        assert read_json(out / "evaluate" / "real_test" / "summary.json")["accuracy"] >= 0.40
        table = read_json(out / "evaluate" / "confidence_table.json")
        for row in table["rows"]:
            assert row["retained_fraction"] is not None
            if row["retained"]:
                assert row["avg_confidence"] > table["threshold"]

        enrichment = read_json(out / "explain" / "enrichment.json")
        for profile in enrichment["profiles"].values():
            for layer in profile["layers"]:
                assert layer["enrichment"] == pytest.approx(layer["to_tag_mass"] * profile["T"] / profile["tag_len"])
        with open(out / "explain" / "enrichment.csv", encoding="utf-8", newline="") as handle:
            rows = list(csv.DictReader(handle))
        assert len(rows) == sum(len(p["layers"]) for p in enrichment["profiles"].values())

        heatmaps = read_json(out / "explain" / "ig_heatmaps.json")
        assert heatmaps
        for heatmap in heatmaps:
            assert len(heatmap["A"]) == len(heatmap["prompt_tokens"])
            assert all(len(row) == len(heatmap["generated_tokens"]) for row in heatmap["A"])
            assert len(heatmap["completeness_gap"]) == len(heatmap["generated_tokens"])
        rankings = read_json(out / "explain" / "top_tokens.json")
        assert sorted(r["author"] for r in rankings) == [0, 1, 2, 3, 4]
        assert all(1 <= len(r["entries"]) <= 5 for r in rankings)


@pytest.mark.slow
class TestDeskScale:
    """Directional end-to-end checks on a 2,000-sentence-per-author demo corpus."""

    def test_detector_and_agreement(self, tmp_path):
        """Test detector accuracy, FFT agreement significance and the FFT over LoRA ordering."""
        write_demo_corpus(tmp_path, sentences_per_author=2000, seed=0)
        scheme = default_scheme()
        corpus = split_corpus(
            build_corpus(load_documents(tmp_path / "raw", scheme), scheme), test_fraction=0.2, rng_seed=0
        )
        backend = ReferenceBackend()
        model = ReferenceModelConfig(layers=2, heads=2, embed_dim=32, vocab=400, context=64)

        detector, _ = train_detector(
            backend, corpus, DetectorHyper(epochs=3, patience=2, batch_size=32, learning_rate=3e-3), model, seed=0
        )
        accuracy = summarize(evaluate_real_test_set(detector, corpus), 5).accuracy

        hyper = TrainingHyper(epochs=2, batch_size=32, learning_rate=3e-3, lora=LoRASettings(rank=4, alpha=8.0))
        base, _ = prepare_generator(backend, corpus, model, hyper, seed=0)
        vocabulary = build_seed_vocabulary(corpus, size=20)
        rates = {}
        for method in ("fft", "lora"):
            handle, _ = fine_tune(backend, base, corpus, method, hyper)
            generated = generate_batch(
                handle, {a: 40 for a in range(5)}, vocabulary, GenerationConfig(max_new_tokens=32), retry_factor=5
            )
            matrix, predictions = agreement_matrix(detector, generated)
            filtered = confidence_filter(predictions, 0.93)
            assert filtered.retained_fraction is not None
            if filtered.retained:
                assert filtered.avg_confidence > 0.93
            rates[method] = matrix
        fft, lora = rates["fft"], rates["lora"]

        assert accuracy >= 0.40
        assert fft.agreement_rate > 0.20
        assert fft.binomial_pvalue < 0.01
        assert fft.agreement_rate >= (lora.agreement_rate or 0.0)
