"""Similarity providers: one query surface over BM25 or embedding stores.

Both providers are immutable after construction and safe for concurrent
queries. Ranking is a total order (similarity descending, id ascending on
ties), so retrieval is deterministic everywhere.
"""

from __future__ import annotations

from typing import Protocol, runtime_checkable

import numpy as np

from ..corpus import Example, example_text
from ..errors import RetrievalError
from .bm25 import Bm25Index, bm25_score, bm25_score_all, tokenize
from .embeddings import EmbeddingStore, cosine


@runtime_checkable
class SimilarityProvider(Protocol):
    def similarity(self, query: Example, candidate_id: str) -> float: ...

    def top_k(self, query: Example, k: int, exclude_id: str | None = None
              ) -> list[tuple[str, float]]: ...


def _rank(ids: list[str], scores, k: int, exclude_id: str | None) -> list[tuple[str, float]]:
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    out = []
    for i in order:
        if exclude_id is not None and ids[i] == exclude_id:
            continue
        out.append((ids[i], float(scores[i])))
        if len(out) == k:
            break
    return out


class Bm25Provider:
    def __init__(self, index: Bm25Index):
        self.index = index

    def similarity(self, query: Example, candidate_id: str) -> float:
        return bm25_score(self.index, tokenize(example_text(query)), candidate_id)

    def top_k(self, query: Example, k: int, exclude_id: str | None = None
              ) -> list[tuple[str, float]]:
        if k < 1:
            raise RetrievalError("k must be >= 1")
        scores = bm25_score_all(self.index, tokenize(example_text(query)))
        return _rank(self.index.ids, scores, k, exclude_id)


class EmbeddingProvider:
    """Cosine similarity over precomputed vectors. The store must hold a
    vector for every candidate id and for every query id it will be asked
    about (queries are embedded offline too)."""

    def __init__(self, store: EmbeddingStore, candidate_ids: list[str]):
        missing = [cid for cid in candidate_ids if cid not in store]
        if missing:
            raise RetrievalError(
                f"embedding store is missing {len(missing)} candidate ids "
                f"(first: {missing[:3]})"
            )
        self.store = store
        self.ids = list(candidate_ids)
        self._matrix = np.stack([store.get(cid) for cid in self.ids]).astype(np.float64)
        norms = np.linalg.norm(self._matrix, axis=1)
        if np.any(norms == 0.0):
            raise RetrievalError("embedding store contains a zero-norm candidate vector")
        self._norms = norms

    def similarity(self, query: Example, candidate_id: str) -> float:
        return cosine(self.store.get(query.id), self.store.get(candidate_id))

    def top_k(self, query: Example, k: int, exclude_id: str | None = None
              ) -> list[tuple[str, float]]:
        if k < 1:
            raise RetrievalError("k must be >= 1")
        q = self.store.get(query.id)
        qn = float(np.linalg.norm(q))
        if qn == 0.0:
            raise RetrievalError(f"query vector {query.id!r} has zero norm")
        scores = (self._matrix @ q) / (self._norms * qn)
        return _rank(self.ids, scores, k, exclude_id)


def retrieve_top_k(provider: SimilarityProvider, query: Example, k: int
                   ) -> list[tuple[str, float]]:
    """The k most similar indexed items (all of them if the corpus is
    smaller), never including the query's own id."""
    if k < 1:
        raise RetrievalError("k must be >= 1")
    return provider.top_k(query, k, exclude_id=query.id)
