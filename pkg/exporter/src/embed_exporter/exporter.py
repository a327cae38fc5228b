"""Token-embedding export from a pretrained causal language model.

For every channel text in the sidecar, the text is tokenized (truncated to
``max_tokens``), run through the model in eval mode, and the final-layer
hidden state of each token is exported. Final states rather than input
embeddings: a beginning-of-sequence token only carries sentence-level
context after attention has run, which is what position-based pooling
downstream relies on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .writer import ChannelEmbedding, write_embedding_file

DEFAULT_MODEL = "EleutherAI/pythia-70m"


class ExportError(Exception):
    pass


@dataclass
class ExportJob:
    model_id: str
    texts_path: str | Path
    out_path: str | Path
    max_tokens: int = 64
    device: str = "cpu"
    revision: str | None = None

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ExportError(f"max_tokens must be >= 1, got {self.max_tokens}")


@dataclass
class ChannelSummary:
    channel_id: str
    n_tokens: int
    bos_index: int | None
    cls_index: int | None
    mean: np.ndarray  # float32 mean of the exported rows


@dataclass
class ExportSummary:
    d_tx: int
    channels: list[ChannelSummary] = field(default_factory=list)


def read_text_sidecar(path: str | Path) -> dict[str, str]:
    """One JSON object per line: {"channel": "<id>", "text": "<string>"}."""
    texts: dict[str, str] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ExportError(f"{path}: line {line_no}: invalid JSON: {exc}") from None
            if not isinstance(record, dict) or "channel" not in record or "text" not in record:
                raise ExportError(f"{path}: line {line_no}: expected channel and text keys")
            cid, text = record["channel"], record["text"]
            if cid in texts:
                raise ExportError(f"{path}: line {line_no}: duplicate channel {cid!r}")
            texts[cid] = text
    if not texts:
        raise ExportError(f"{path}: sidecar contains no channels")
    return texts


def _load_model(job: ExportJob):
    import torch
    from transformers import AutoModel, AutoTokenizer

    kwargs = {}
    if job.revision:
        kwargs["revision"] = job.revision
    try:
        tokenizer = AutoTokenizer.from_pretrained(job.model_id, **kwargs)
        model = AutoModel.from_pretrained(job.model_id, **kwargs)
    except Exception as exc:
        raise ExportError(f"cannot load model {job.model_id!r}: {exc}") from exc
    model.eval()
    model.to(torch.device(job.device))
    return tokenizer, model


def _special_index(ids: list[int], token_id: int | None) -> int | None:
    if token_id is None or token_id not in ids:
        return None
    return ids.index(token_id)


def export_embeddings(job: ExportJob) -> ExportSummary:
    """Run the model over every channel text and write the embedding file.

    Returns a summary with per-channel token counts and the exporter's own
    float32 token means, computed independently of the written payload so
    downstream pooling can be cross-checked.
    """
    import torch

    texts = read_text_sidecar(job.texts_path)
    tokenizer, model = _load_model(job)
    channels: list[ChannelEmbedding] = []
    summary = ExportSummary(d_tx=int(model.config.hidden_size))
    with torch.no_grad():
        for cid, text in texts.items():
            if not text.strip():
                raise ExportError(f"channel {cid!r} has empty text")
            encoded = tokenizer(text, truncation=True, max_length=job.max_tokens,
                                return_tensors="pt")
            ids = encoded["input_ids"][0].tolist()
            if not ids:
                raise ExportError(f"channel {cid!r} tokenized to zero tokens")
            encoded = {k: v.to(model.device) for k, v in encoded.items()}
            hidden = model(**encoded).last_hidden_state[0]  # n x d_tx
            rows = hidden.to(torch.float32).cpu().numpy()
            bos = _special_index(ids, tokenizer.bos_token_id)
            cls = _special_index(ids, tokenizer.cls_token_id)
            channels.append(ChannelEmbedding(cid, rows, bos, cls))
            summary.channels.append(ChannelSummary(
                cid, len(ids), bos, cls, rows.mean(axis=0, dtype=np.float64)
                .astype(np.float32)))
    try:
        write_embedding_file(channels, job.out_path)
    except OSError as exc:
        raise ExportError(f"cannot write {job.out_path}: {exc}") from exc
    return summary
