"""Per-channel token embedding sets and query-vector pooling.

Embeddings are precomputed and frozen; the tower itself is non-trainable
(the one trainable adapter on the pooled vector lives in the fusion head).

Binary embedding file, all integers little-endian:
    magic "TFHE" | u16 version=1 | u32 d_tx | u32 n_channels
    then per channel:
    u16 id byte-length | UTF-8 id | u32 n_tokens |
    i32 bos_index (-1 if absent) | i32 cls_index (-1 if absent) |
    n_tokens x d_tx float32 values, row-major
"""

from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmbeddingFileError, PoolingError, ShapeError

MAGIC = b"TFHE"
VERSION = 1


class PoolingStrategy(str, enum.Enum):
    MEAN = "mean"
    BOS = "bos"
    CLS = "cls"


@dataclass
class TokenEmbeddingSet:
    channel_id: str
    tokens: np.ndarray  # n x d_tx, float32
    bos_index: int | None = None
    cls_index: int | None = None

    def __post_init__(self):
        self.tokens = np.ascontiguousarray(self.tokens, dtype=np.float32)
        if self.tokens.ndim != 2 or self.tokens.shape[0] < 1:
            raise EmbeddingFileError(
                f"channel {self.channel_id!r}: token matrix must be n x d_tx with n >= 1, "
                f"got shape {self.tokens.shape}")
        n = self.tokens.shape[0]
        for name, idx in (("bos_index", self.bos_index), ("cls_index", self.cls_index)):
            if idx is not None and not 0 <= idx < n:
                raise EmbeddingFileError(
                    f"channel {self.channel_id!r}: {name} {idx} out of range for {n} tokens")
        if not np.isfinite(self.tokens).all():
            raise EmbeddingFileError(f"channel {self.channel_id!r}: non-finite embedding values")

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[0]

    @property
    def d_tx(self) -> int:
        return self.tokens.shape[1]


def pool(embedding_set: TokenEmbeddingSet, strategy: PoolingStrategy | str) -> np.ndarray:
    """Reduce n token embeddings to one float64 query vector of width d_tx."""
    strategy = PoolingStrategy(strategy)
    tokens = embedding_set.tokens.astype(np.float64)
    if strategy is PoolingStrategy.MEAN:
        return tokens.mean(axis=0)
    if strategy is PoolingStrategy.BOS:
        if embedding_set.bos_index is None:
            raise PoolingError(
                f"channel {embedding_set.channel_id!r} has no bos token; "
                "the 'bos' pooling strategy is unavailable")
        return tokens[embedding_set.bos_index].copy()
    if embedding_set.cls_index is None:
        raise PoolingError(
            f"channel {embedding_set.channel_id!r} has no cls token; "
            "the 'cls' pooling strategy is unavailable")
    return tokens[embedding_set.cls_index].copy()


def hash_embed_text(text: str, d_tx: int, seed: int,
                    channel_id: str = "") -> TokenEmbeddingSet:
    """Deterministic stand-in embedder: whitespace tokens, one seeded row each.

    Each token row is drawn from a generator keyed by a stable 64-bit hash of
    (token bytes, seed), so identical tokens always embed identically and a
    one-token edit changes exactly one row. Values lie in [-1, 1].
    """
    if d_tx < 1:
        raise ShapeError(f"d_tx must be >= 1, got {d_tx}")
    words = text.split()
    if not words:
        raise ShapeError("cannot embed empty text")
    rows = np.empty((len(words), d_tx), dtype=np.float32)
    for i, word in enumerate(words):
        digest = hashlib.blake2b(
            word.encode("utf-8") + b"\x00" + seed.to_bytes(8, "little", signed=True),
            digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        rows[i] = rng.uniform(-1.0, 1.0, d_tx)
    return TokenEmbeddingSet(channel_id, rows, bos_index=0, cls_index=None)


def write_embedding_file(sets: dict[str, TokenEmbeddingSet], path: str | Path) -> None:
    """Serialize embedding sets; byte output is deterministic per input order."""
    if not sets:
        raise EmbeddingFileError("refusing to write an embedding file with no channels")
    widths = {s.d_tx for s in sets.values()}
    if len(widths) != 1:
        raise EmbeddingFileError(f"d_tx differs across channels: {sorted(widths)}")
    d_tx = widths.pop()
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HII", VERSION, d_tx, len(sets)))
        for cid, s in sets.items():
            if cid != s.channel_id:
                raise EmbeddingFileError(
                    f"map key {cid!r} does not match set channel_id {s.channel_id!r}")
            id_bytes = cid.encode("utf-8")
            if len(id_bytes) > 0xFFFF:
                raise EmbeddingFileError(f"channel id too long: {cid!r}")
            fh.write(struct.pack("<H", len(id_bytes)))
            fh.write(id_bytes)
            bos = -1 if s.bos_index is None else s.bos_index
            cls = -1 if s.cls_index is None else s.cls_index
            fh.write(struct.pack("<Iii", s.n_tokens, bos, cls))
            fh.write(s.tokens.astype("<f4").tobytes(order="C"))


class _Cursor:
    """Bounds-checked reader; corrupted length fields raise before allocation."""

    def __init__(self, blob: bytes, label: str):
        self.blob = blob
        self.pos = 0
        self.label = label

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.blob):
            raise EmbeddingFileError(
                f"{self.label}: truncated payload (need {n} bytes at offset {self.pos}, "
                f"have {len(self.blob) - self.pos})")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    @property
    def exhausted(self) -> bool:
        return self.pos == len(self.blob)


def read_embedding_file(path: str | Path) -> dict[str, TokenEmbeddingSet]:
    blob = Path(path).read_bytes()
    cur = _Cursor(blob, str(path))
    if cur.take(4) != MAGIC:
        raise EmbeddingFileError(f"{path}: bad magic, not an embedding file")
    version, d_tx, n_channels = cur.unpack("<HII")
    if version != VERSION:
        raise EmbeddingFileError(f"{path}: unsupported version {version} (expected {VERSION})")
    if d_tx < 1:
        raise EmbeddingFileError(f"{path}: d_tx must be >= 1, got {d_tx}")
    sets: dict[str, TokenEmbeddingSet] = {}
    for _ in range(n_channels):
        (id_len,) = cur.unpack("<H")
        try:
            cid = cur.take(id_len).decode("utf-8")
        except UnicodeDecodeError:
            raise EmbeddingFileError(f"{path}: channel id is not valid UTF-8") from None
        n_tokens, bos, cls = cur.unpack("<Iii")
        if n_tokens < 1:
            raise EmbeddingFileError(f"{path}: channel {cid!r} has n_tokens = 0")
        payload = cur.take(n_tokens * d_tx * 4)
        tokens = np.frombuffer(payload, dtype="<f4").reshape(n_tokens, d_tx)
        if cid in sets:
            raise EmbeddingFileError(f"{path}: duplicate channel {cid!r}")
        for name, idx in (("bos_index", bos), ("cls_index", cls)):
            if idx < -1 or idx >= n_tokens:
                raise EmbeddingFileError(
                    f"{path}: channel {cid!r}: {name} {idx} out of range for {n_tokens} tokens")
        try:
            sets[cid] = TokenEmbeddingSet(
                cid, tokens,
                bos_index=None if bos == -1 else bos,
                cls_index=None if cls == -1 else cls)
        except EmbeddingFileError as exc:
            raise EmbeddingFileError(f"{path}: {exc}") from None
    if not cur.exhausted:
        raise EmbeddingFileError(
            f"{path}: {len(blob) - cur.pos} trailing bytes after the last channel")
    if not sets:
        raise EmbeddingFileError(f"{path}: file declares zero channels")
    return sets
