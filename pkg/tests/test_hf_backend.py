"""
Pretrained-backend tests that need no downloaded model.
"""

from app.services.backend import get_backend
from app.services.hf_backend import HFTokenizerAdapter, HuggingFaceBackend


class _StubTokenizer:
    """Just enough of a Hugging Face tokenizer for the adapter."""

    def __init__(self, pad_token_id=None, eos_token_id=2):
        self.pad_token_id = pad_token_id
        self.eos_token_id = eos_token_id
        self.all_special_tokens = ["<|endoftext|>", "<0>"]
        self.vocab = {"<|endoftext|>": 2, "<0>": 7, "Hello": 11}

    def __len__(self):
        return 50

    def get_vocab(self):
        return dict(self.vocab)

    def encode(self, text, add_special_tokens=False):
        return [self.vocab[t] for t in text.split()]

    def decode(self, ids, skip_special_tokens=False, clean_up_tokenization_spaces=False):
        names = {v: k for k, v in self.vocab.items()}
        return " ".join(names[i] for i in ids)


class TestHFTokenizerAdapter:
    """Test the tokenizer surface shared with the reference tokenizer."""

    def test_pad_falls_back_to_eos(self):
        """Test that a tokenizer without a pad token pads with end-of-text."""
        assert HFTokenizerAdapter(_StubTokenizer()).pad_id == 2
        assert HFTokenizerAdapter(_StubTokenizer(pad_token_id=0)).pad_id == 0

    def test_tags(self):
        """Test tag ids and special-token checks."""
        adapter = HFTokenizerAdapter(_StubTokenizer(), ["<0>", "<end>"])

        assert adapter.tag_ids == [7]
        assert adapter.is_special("<0>")
        assert adapter.is_special("<end>")
        assert not adapter.is_special("Hello")

    def test_encode_decode(self):
        """Test encoding without special tokens and per-token display."""
        adapter = HFTokenizerAdapter(_StubTokenizer())

        ids = adapter.encode("<0> Hello")

        assert ids == [7, 11]
        assert adapter.decode(ids) == "<0> Hello"
        assert adapter.display_tokens(ids) == ["<0>", "Hello"]
        assert adapter.vocab_size == 50


class TestBackendSelection:
    """Test choosing the pretrained backend by name."""

    def test_hf_by_name(self):
        """Test that the backend is built without loading any model."""
        backend = get_backend("hf")

        assert isinstance(backend, HuggingFaceBackend)
        assert backend.name == "hf"

    def test_no_default_pretraining(self):
        """Test that pretrained checkpoints are fine-tuned without an extra language-model pass."""
        assert HuggingFaceBackend.default_pretrain_epochs == 0
