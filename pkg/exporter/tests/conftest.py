import os

os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("TRANSFORMERS_OFFLINE", "1")
os.environ.setdefault("TOKENIZERS_PARALLELISM", "false")

import numpy as np
import pytest
import torch


VOCAB_WORDS = [
    "regime", "channel", "the", "a", "daily", "traffic", "of", "page",
    "alpha", "beta", "gamma", "delta", "story", "news", "item", "topic",
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
]


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    """A small causal LM plus word-level tokenizer saved to a local path."""
    from tokenizers import Tokenizer, models, pre_tokenizers, processors
    from transformers import GPT2Config, GPT2Model, PreTrainedTokenizerFast

    out = tmp_path_factory.mktemp("tiny-causal-lm")
    vocab = {"<bos>": 0, "<unk>": 1}
    for word in VOCAB_WORDS:
        vocab[word] = len(vocab)
    tok = Tokenizer(models.WordLevel(vocab, unk_token="<unk>"))
    tok.pre_tokenizer = pre_tokenizers.Whitespace()
    tok.post_processor = processors.TemplateProcessing(
        single="<bos> $A", special_tokens=[("<bos>", 0)])
    fast = PreTrainedTokenizerFast(tokenizer_object=tok, bos_token="<bos>",
                                   unk_token="<unk>")
    fast.save_pretrained(out)

    torch.manual_seed(1234)
    config = GPT2Config(vocab_size=len(vocab), n_positions=64, n_embd=16,
                        n_layer=1, n_head=2, bos_token_id=0, eos_token_id=0)
    model = GPT2Model(config)
    model.eval()
    model.save_pretrained(out)
    return out


@pytest.fixture
def sidecar(tmp_path):
    import json

    path = tmp_path / "texts.jsonl"
    records = [
        {"channel": "ch000", "text": "regime 0 channel 0"},
        {"channel": "ch001", "text": "regime 1 channel 1"},
        {"channel": "ch002", "text": "the daily traffic of a page"},
    ]
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n")
    return path
