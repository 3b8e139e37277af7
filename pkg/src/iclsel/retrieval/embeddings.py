"""Precomputed embedding store and cosine similarity.

Embeddings are produced offline by whatever encoder the experiment calls
for; the core only ever loads vectors from disk. Binary layout:

    magic "EMB1" | u32 dim | u32 count          (little-endian)
    then per record: u16 id-length | id (UTF-8) | dim float32 (little-endian)

A JSONL fallback ({"id": str, "vec": [float]} per line) is also accepted.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import RetrievalError

_MAGIC = b"EMB1"


@dataclass
class EmbeddingStore:
    dim: int
    vectors: dict[str, np.ndarray]

    def __post_init__(self):
        for vid, vec in self.vectors.items():
            if vec.shape != (self.dim,):
                raise RetrievalError(
                    f"vector {vid!r} has dimension {vec.shape}, expected ({self.dim},)"
                )
            if not np.all(np.isfinite(vec)):
                raise RetrievalError(f"vector {vid!r} contains non-finite values")

    def __contains__(self, vid: str) -> bool:
        return vid in self.vectors

    def get(self, vid: str) -> np.ndarray:
        try:
            return self.vectors[vid]
        except KeyError:
            raise RetrievalError(f"no embedding stored for id {vid!r}") from None


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise RetrievalError(f"cosine dimension mismatch: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise RetrievalError("cosine is undefined for a zero-norm vector")
    return float(np.dot(u, v) / (nu * nv))


def load_embeddings(path: str | Path) -> EmbeddingStore:
    path = Path(path)
    if not path.is_file():
        raise RetrievalError(f"embedding file not found: {path}")
    with path.open("rb") as fh:
        head = fh.read(4)
    if head == _MAGIC:
        return _load_binary(path)
    return _load_jsonl(path)


def _load_binary(path: Path) -> EmbeddingStore:
    vectors: dict[str, np.ndarray] = {}
    with path.open("rb") as fh:
        header = fh.read(12)
        if len(header) != 12 or header[:4] != _MAGIC:
            raise RetrievalError(f"{path}: truncated embedding header")
        dim, count = struct.unpack("<II", header[4:])
        for i in range(count):
            raw = fh.read(2)
            if len(raw) != 2:
                raise RetrievalError(f"{path}: truncated record {i}")
            (id_len,) = struct.unpack("<H", raw)
            vid = fh.read(id_len).decode("utf-8")
            buf = fh.read(4 * dim)
            if len(buf) != 4 * dim:
                raise RetrievalError(f"{path}: truncated vector for id {vid!r}")
            vec = np.frombuffer(buf, dtype="<f4").astype(np.float64)
            if vid in vectors:
                raise RetrievalError(f"{path}: duplicate id {vid!r}")
            vectors[vid] = vec
    if not vectors:
        raise RetrievalError(f"{path}: embedding file holds no vectors")
    return EmbeddingStore(dim=dim, vectors=vectors)


def _load_jsonl(path: Path) -> EmbeddingStore:
    vectors: dict[str, np.ndarray] = {}
    dim: int | None = None
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise RetrievalError(f"{path}:{lineno}: invalid JSON ({e.msg})") from e
            if "id" not in rec or "vec" not in rec:
                raise RetrievalError(f"{path}:{lineno}: record needs 'id' and 'vec'")
            vec = np.asarray(rec["vec"], dtype=np.float64)
            if dim is None:
                dim = int(vec.shape[0])
            elif vec.shape != (dim,):
                raise RetrievalError(
                    f"{path}:{lineno}: vector of dimension {vec.shape[0]}, expected {dim}"
                )
            if rec["id"] in vectors:
                raise RetrievalError(f"{path}:{lineno}: duplicate id {rec['id']!r}")
            vectors[rec["id"]] = vec
    if dim is None:
        raise RetrievalError(f"{path}: embedding file holds no vectors")
    return EmbeddingStore(dim=dim, vectors=vectors)


def save_embeddings(store: EmbeddingStore, path: str | Path) -> None:
    """Write the binary layout (the canonical interchange form)."""
    with Path(path).open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", store.dim, len(store.vectors)))
        for vid, vec in store.vectors.items():
            encoded = vid.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise RetrievalError(f"id too long to serialize: {vid[:40]!r}...")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(np.asarray(vec, dtype="<f4").tobytes())
