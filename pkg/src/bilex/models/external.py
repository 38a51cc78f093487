"""File adapters for externally trained models.

Models trained elsewhere (e.g. neural LMs) connect through two little-endian
binary formats; this module writes and reads both and exposes them behind
the scoring/embedding contracts.

Embedding file ("EMB1"): magic, u32 version, u32 n_layers, u32 vocab,
u32 dim, then n_layers row-major float32 matrices of shape (vocab, dim).

Score file ("LSC1"): magic, u32 version, then records of u64 sequence hash,
u32 len, and len-1 float32 log-probs. The sequence hash is FNV-1a 64 over
the token ids encoded as little-endian u32; scoring replays the stored
values for exactly the requested sequence.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..rng import fnv1a64
from .base import EFFECTIVELY_UNBOUNDED, MissingTokenError, ModelError

EMB_MAGIC = b"EMB1"
SCORE_MAGIC = b"LSC1"
FORMAT_VERSION = 1


class BadMagic(ModelError):
    pass


class VersionMismatch(ModelError):
    pass


class HashMiss(ModelError):
    """Requested sequence is not present in the score file."""


def sequence_hash(ids: Sequence[int]) -> int:
    return fnv1a64(b"".join(struct.pack("<I", i) for i in ids))


def _read_header(f, magic: bytes) -> None:
    got = f.read(4)
    if got != magic:
        raise BadMagic(f"expected magic {magic!r}, got {got!r}")
    (version,) = struct.unpack("<I", f.read(4))
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"unsupported version {version}")


def write_embedding_file(path: str | Path, layers: np.ndarray) -> None:
    layers = np.ascontiguousarray(layers, dtype=np.float32)
    if layers.ndim != 3:
        raise ModelError("layers must have shape (n_layers, vocab, dim)")
    n_layers, vocab, dim = layers.shape
    with Path(path).open("wb") as f:
        f.write(EMB_MAGIC)
        f.write(struct.pack("<IIII", FORMAT_VERSION, n_layers, vocab, dim))
        f.write(layers.tobytes(order="C"))


class ExternalEmbeddings:
    """Per-layer token vectors replayed from an embedding file."""

    def __init__(self, path: str | Path):
        with Path(path).open("rb") as f:
            _read_header(f, EMB_MAGIC)
            self.n_layers, self.vocab_size, self.dim = struct.unpack("<III", f.read(12))
            count = self.n_layers * self.vocab_size * self.dim
            data = np.frombuffer(f.read(count * 4), dtype="<f4", count=count)
        self._layers = data.reshape(self.n_layers, self.vocab_size, self.dim)

    def vector(self, token_id: int, layer: int = 0) -> np.ndarray:
        if not 0 <= layer < self.n_layers:
            raise MissingTokenError(f"layer {layer} out of range (n_layers={self.n_layers})")
        if not 0 <= token_id < self.vocab_size:
            raise MissingTokenError(f"token id {token_id} out of range (vocab={self.vocab_size})")
        return self._layers[layer, token_id]


def write_score_file(
    path: str | Path, records: Iterable[tuple[Sequence[int], Sequence[float]]]
) -> None:
    """Store per-token log-probs for each sequence, keyed by its hash."""
    with Path(path).open("wb") as f:
        f.write(SCORE_MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        for ids, log_probs in records:
            if len(log_probs) != len(ids) - 1:
                raise ModelError("expected len(ids) - 1 log-probs per record")
            f.write(struct.pack("<QI", sequence_hash(ids), len(ids)))
            f.write(np.asarray(log_probs, dtype="<f4").tobytes())


class ExternalScores:
    """ScoringModel that replays stored per-token log-probs."""

    def __init__(self, path: str | Path):
        self.context_window = EFFECTIVELY_UNBOUNDED
        self._records: dict[int, tuple[int, np.ndarray]] = {}
        with Path(path).open("rb") as f:
            _read_header(f, SCORE_MAGIC)
            while True:
                head = f.read(12)
                if not head:
                    break
                if len(head) < 12:
                    raise ModelError("truncated score record")
                seq_hash, length = struct.unpack("<QI", head)
                values = np.frombuffer(f.read((length - 1) * 4), dtype="<f4", count=length - 1)
                self._records[seq_hash] = (length, values)

    def log_probs(self, ids: Sequence[int]) -> list[float]:
        record = self._records.get(sequence_hash(ids))
        if record is None or record[0] != len(ids):
            raise HashMiss(f"sequence of length {len(ids)} not in score file")
        return [float(x) for x in record[1]]


def load_external_model(
    score_path: str | Path, embedding_path: str | Path
) -> tuple[ExternalScores, ExternalEmbeddings]:
    return ExternalScores(score_path), ExternalEmbeddings(embedding_path)
