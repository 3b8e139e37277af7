"""Candidate retrieval: BM25 and precomputed-embedding similarity."""

from .bm25 import (
    Bm25Index,
    bm25_score,
    bm25_score_all,
    build_bm25,
    load_bm25,
    save_bm25,
    tokenize,
)
from .embeddings import EmbeddingStore, cosine, load_embeddings, save_embeddings
from .kernels import KERNEL_BACKEND
from .providers import Bm25Provider, EmbeddingProvider, SimilarityProvider, retrieve_top_k

__all__ = [
    "Bm25Index",
    "Bm25Provider",
    "EmbeddingProvider",
    "EmbeddingStore",
    "KERNEL_BACKEND",
    "SimilarityProvider",
    "bm25_score",
    "bm25_score_all",
    "build_bm25",
    "cosine",
    "load_bm25",
    "load_embeddings",
    "retrieve_top_k",
    "save_bm25",
    "save_embeddings",
    "tokenize",
]
