"""
Low-rank adapter tests.
"""

import numpy as np
import pytest
import torch
from torch import nn

from app.models.lora import LoRALinear, apply_lora, count_parameters, lora_trainable_count
from app.schemas import LoRASettings, ReferenceModelConfig, TrainingHyper
from app.services.backend import ReferenceBackend, forward, make_reference_model
from app.services.generation import fine_tune, prepare_generator

ALL_PROJECTIONS = ["q_proj", "k_proj", "v_proj", "out_proj"]


class TestLoRALinear:
    """Test the adapter layer."""

    def test_starts_as_identity_update(self):
        """Test that a fresh adapter leaves the output unchanged."""
        torch.manual_seed(0)
        base = nn.Linear(8, 6)
        x = torch.randn(3, 8)
        expected = base(x).detach()

        wrapped = LoRALinear(base, rank=2, alpha=4.0)

        torch.testing.assert_close(wrapped(x), expected)

    def test_update_is_scaled_low_rank(self):
        """Test that the update equals (alpha / rank) * B @ A."""
        torch.manual_seed(0)
        base = nn.Linear(4, 4)
        wrapped = LoRALinear(base, rank=2, alpha=8.0)
        with torch.no_grad():
            wrapped.B.fill_(0.5)
        x = torch.randn(5, 4)

        delta = wrapped(x) - base(x)

        torch.testing.assert_close(delta, 4.0 * x @ (wrapped.B @ wrapped.A).T)

    def test_base_frozen(self):
        """Test that only A and B are trainable."""
        wrapped = LoRALinear(nn.Linear(4, 4), rank=2)

        trainable = {name for name, p in wrapped.named_parameters() if p.requires_grad}

        assert trainable == {"A", "B"}


class TestApplyLoRA:
    """Test wrapping a whole model."""

    def test_large_model_closed_form(self):
        """Test the trainable count for all four projections of a 24-layer, 2048-wide model."""
        assert lora_trainable_count(24, 2048, 8, ALL_PROJECTIONS) == 3_145_728

    def test_trainable_count_matches_closed_form(self):
        """Test that the wrapped model trains exactly the closed-form number of parameters."""
        config = ReferenceModelConfig(layers=3, heads=2, embed_dim=32, vocab=500, context=16)
        handle = make_reference_model(config)

        apply_lora(handle.module, LoRASettings(rank=4, alpha=8.0, targets=ALL_PROJECTIONS))

        assert handle.trainable_parameter_count == lora_trainable_count(3, 32, 4, ALL_PROJECTIONS)

    def test_small_trainable_share(self):
        """Test that adapters train under one percent of a mid-sized model."""
        config = ReferenceModelConfig(layers=4, heads=4, embed_dim=256, vocab=8000, context=128)
        handle = make_reference_model(config)

        apply_lora(handle.module, LoRASettings(rank=2, alpha=4.0))
        total, trainable = count_parameters(handle.module)

        assert trainable / total < 0.01

    def test_wrapped_names(self):
        """Test that only the targeted projections are wrapped."""
        handle = make_reference_model(ReferenceModelConfig(layers=2, heads=2, embed_dim=16, vocab=300, context=8))

        names = apply_lora(handle.module, LoRASettings(rank=2))

        assert names == [
            "blocks.0.attn.q_proj", "blocks.0.attn.v_proj", "blocks.1.attn.q_proj", "blocks.1.attn.v_proj"
        ]

    def test_unknown_target(self):
        """Test that a target matching no layer is refused."""
        handle = make_reference_model(ReferenceModelConfig(layers=1, heads=1, embed_dim=8, vocab=300, context=8))

        with pytest.raises(ValueError):
            apply_lora(handle.module, LoRASettings(targets=["gate_proj"]))

    def test_output_unchanged_after_attach(self, backend: ReferenceBackend):
        """Test that attaching adapters does not change the logits."""
        handle = make_reference_model(ReferenceModelConfig(layers=2, heads=2, embed_dim=16, vocab=300, context=8))
        before = forward(handle, [1, 2, 3]).logits

        backend.attach_lora(handle, LoRASettings(rank=2))

        np.testing.assert_allclose(forward(handle, [1, 2, 3]).logits, before, atol=1e-6)
        assert handle.method == "lora"

    def test_base_weights_stay_fixed_in_training(self, demo_corpus, backend: ReferenceBackend):
        """Test that LoRA fine-tuning leaves every base weight untouched."""
        config = ReferenceModelConfig(layers=1, heads=2, embed_dim=16, vocab=300, context=48)
        hyper = TrainingHyper(epochs=1, batch_size=64, learning_rate=1e-2, max_steps=3, lora=LoRASettings(rank=2))
        base, _ = prepare_generator(backend, demo_corpus, config, hyper)

        tuned, report = fine_tune(backend, base, demo_corpus, "lora", hyper)

        base_state = base.module.state_dict()
        for name, value in tuned.module.state_dict().items():
            if name.endswith(".A") or name.endswith(".B"):
                continue
            original = name.replace(".base.", ".")
            assert torch.equal(value, base_state[original]), name
        assert report.trainable_parameter_count < report.parameter_count
