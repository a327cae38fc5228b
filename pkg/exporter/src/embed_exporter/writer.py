"""Self-contained writer for the binary embedding file format.

Layout (all integers little-endian):
    magic "TFHE" | u16 version=1 | u32 d_tx | u32 n_channels
    per channel: u16 id byte-length | UTF-8 id | u32 n_tokens |
    i32 bos_index (-1 if absent) | i32 cls_index (-1 if absent) |
    n_tokens x d_tx float32 values, row-major

Kept independent of the consumer package on purpose: the file format is the
interface, and round-trip tests exercise two separate implementations of it.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"TFHE"
VERSION = 1


@dataclass
class ChannelEmbedding:
    channel_id: str
    tokens: np.ndarray  # n x d_tx float32
    bos_index: int | None
    cls_index: int | None


def write_embedding_file(channels: list[ChannelEmbedding], path: str | Path) -> None:
    if not channels:
        raise ValueError("nothing to write: no channels")
    d_tx = channels[0].tokens.shape[1]
    seen = set()
    for ch in channels:
        if ch.tokens.ndim != 2 or ch.tokens.shape[0] < 1:
            raise ValueError(f"channel {ch.channel_id!r}: empty token matrix")
        if ch.tokens.shape[1] != d_tx:
            raise ValueError(f"channel {ch.channel_id!r}: width {ch.tokens.shape[1]} "
                             f"differs from {d_tx}")
        if ch.channel_id in seen:
            raise ValueError(f"duplicate channel {ch.channel_id!r}")
        seen.add(ch.channel_id)
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HII", VERSION, d_tx, len(channels)))
        for ch in channels:
            id_bytes = ch.channel_id.encode("utf-8")
            fh.write(struct.pack("<H", len(id_bytes)))
            fh.write(id_bytes)
            bos = -1 if ch.bos_index is None else ch.bos_index
            cls = -1 if ch.cls_index is None else ch.cls_index
            fh.write(struct.pack("<Iii", ch.tokens.shape[0], bos, cls))
            fh.write(np.ascontiguousarray(ch.tokens, dtype="<f4").tobytes(order="C"))
