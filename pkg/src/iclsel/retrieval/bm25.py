"""Okapi BM25 lexical index.

Scoring follows the classic formulation with k1=1.2, b=0.75 and the
+1-smoothed IDF:

    score(q, d) = sum over t in q of
        IDF(t) * f(t,d) * (k1+1) / (f(t,d) + k1 * (1 - b + b*|d|/avgdl))
    IDF(t) = ln((N - df(t) + 0.5) / (df(t) + 0.5) + 1)

Query terms are summed as given (a repeated query term contributes twice).
Whole-corpus scoring runs through a flat inverted index and the kernel picked
in :mod:`.kernels`; single-document scoring walks the per-document term maps
directly with the same arithmetic, so the two paths agree bitwise.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import RetrievalError

# lowercased runs of letters/digits; whitespace and punctuation (incl. "_") split
_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


@dataclass
class Bm25Index:
    ids: list[str]
    doc_term_freqs: list[dict[str, int]]
    doc_lengths: list[int]
    avg_doc_length: float
    doc_freqs: dict[str, int]
    corpus_size: int
    k1: float = 1.2
    b: float = 0.75

    # flat inverted index for the scoring kernels, built once in build_bm25
    _id_to_idx: dict[str, int] = field(default_factory=dict, repr=False)
    _term_to_tid: dict[str, int] = field(default_factory=dict, repr=False)
    _indptr: np.ndarray | None = field(default=None, repr=False)
    _post_docs: np.ndarray | None = field(default=None, repr=False)
    _post_tfs: np.ndarray | None = field(default=None, repr=False)
    _idf: np.ndarray | None = field(default=None, repr=False)
    _norm: np.ndarray | None = field(default=None, repr=False)

    def idf(self, term: str) -> float:
        df = self.doc_freqs.get(term, 0)
        return math.log((self.corpus_size - df + 0.5) / (df + 0.5) + 1.0)


def _finalize(index: Bm25Index) -> Bm25Index:
    index._id_to_idx = {doc_id: i for i, doc_id in enumerate(index.ids)}
    # vocabulary in order of first appearance: deterministic regardless of hashing
    term_to_tid: dict[str, int] = {}
    for tf in index.doc_term_freqs:
        for term in tf:
            if term not in term_to_tid:
                term_to_tid[term] = len(term_to_tid)
    postings: list[list[tuple[int, int]]] = [[] for _ in term_to_tid]
    for di, tf in enumerate(index.doc_term_freqs):
        for term, count in tf.items():
            postings[term_to_tid[term]].append((di, count))
    counts = [len(p) for p in postings]
    indptr = np.zeros(len(postings) + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    post_docs = np.empty(int(indptr[-1]), dtype=np.int32)
    post_tfs = np.empty(int(indptr[-1]), dtype=np.float64)
    for tid, plist in enumerate(postings):
        lo = int(indptr[tid])
        for off, (di, count) in enumerate(plist):
            post_docs[lo + off] = di
            post_tfs[lo + off] = float(count)
    idf = np.empty(len(term_to_tid), dtype=np.float64)
    for term, tid in term_to_tid.items():
        idf[tid] = index.idf(term)
    lengths = np.asarray(index.doc_lengths, dtype=np.float64)
    # a corpus of entirely empty documents has avgdl 0; nothing is scorable
    # there, but the norm array must still be finite
    ratio = lengths / index.avg_doc_length if index.avg_doc_length > 0 else np.zeros_like(lengths)
    norm = index.k1 * (1.0 - index.b + index.b * ratio)
    index._term_to_tid = term_to_tid
    index._indptr = indptr
    index._post_docs = post_docs
    index._post_tfs = post_tfs
    index._idf = idf
    index._norm = norm
    return index


def build_bm25(corpus: list[tuple[str, str]], k1: float = 1.2, b: float = 0.75) -> Bm25Index:
    """Index a corpus of (id, text) pairs. Empty corpora are an error."""
    if not corpus:
        raise RetrievalError("cannot build a BM25 index over an empty corpus")
    ids = [doc_id for doc_id, _ in corpus]
    if len(set(ids)) != len(ids):
        raise RetrievalError("duplicate document ids in BM25 corpus")
    doc_term_freqs: list[dict[str, int]] = []
    doc_lengths: list[int] = []
    doc_freqs: dict[str, int] = {}
    for _, text in corpus:
        terms = tokenize(text)
        tf: dict[str, int] = {}
        for t in terms:
            tf[t] = tf.get(t, 0) + 1
        doc_term_freqs.append(tf)
        doc_lengths.append(len(terms))
        for t in tf:
            doc_freqs[t] = doc_freqs.get(t, 0) + 1
    index = Bm25Index(
        ids=ids,
        doc_term_freqs=doc_term_freqs,
        doc_lengths=doc_lengths,
        avg_doc_length=math.fsum(doc_lengths) / len(doc_lengths),
        doc_freqs=doc_freqs,
        corpus_size=len(ids),
        k1=k1,
        b=b,
    )
    return _finalize(index)


def bm25_score(index: Bm25Index, query_terms: list[str], doc_id: str) -> float:
    """Score one document against a term list. Unknown doc ids are an error;
    query terms absent from the document contribute zero."""
    if doc_id not in index._id_to_idx:
        raise RetrievalError(f"document id {doc_id!r} is not in the index")
    di = index._id_to_idx[doc_id]
    tf_map = index.doc_term_freqs[di]
    norm = index._norm[di]
    k1p1 = index.k1 + 1.0
    score = 0.0
    for t in query_terms:
        tf = tf_map.get(t)
        if not tf:
            continue
        score += index.idf(t) * tf * k1p1 / (tf + norm)
    return score


def bm25_score_all(index: Bm25Index, query_terms: list[str]) -> np.ndarray:
    """Score every indexed document against the query (kernel-dispatched)."""
    from . import kernels

    out = np.zeros(index.corpus_size, dtype=np.float64)
    qtids = np.asarray(
        [index._term_to_tid[t] for t in query_terms if t in index._term_to_tid],
        dtype=np.int32,
    )
    if qtids.size:
        kernels.score_all(qtids, index._indptr, index._post_docs, index._post_tfs,
                          index._idf, index._norm, index.k1 + 1.0, out)
    return out


# --------------------------------------------------------------------------
# on-disk form (cmd_index artifact); plain JSON so re-runs are byte-identical
# --------------------------------------------------------------------------

def save_bm25(index: Bm25Index, path: str | Path) -> None:
    payload = {
        "format": "bm25.v1",
        "k1": index.k1,
        "b": index.b,
        "ids": index.ids,
        "doc_term_freqs": index.doc_term_freqs,
        "doc_lengths": index.doc_lengths,
    }
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False)
        fh.write("\n")


def load_bm25(path: str | Path) -> Bm25Index:
    path = Path(path)
    if not path.is_file():
        raise RetrievalError(f"BM25 index file not found: {path}")
    payload = json.loads(path.read_text(encoding="utf-8"))
    if payload.get("format") != "bm25.v1":
        raise RetrievalError(f"{path}: not a BM25 index file")
    doc_term_freqs = payload["doc_term_freqs"]
    doc_freqs: dict[str, int] = {}
    for tf in doc_term_freqs:
        for t in tf:
            doc_freqs[t] = doc_freqs.get(t, 0) + 1
    lengths = payload["doc_lengths"]
    index = Bm25Index(
        ids=payload["ids"],
        doc_term_freqs=doc_term_freqs,
        doc_lengths=lengths,
        avg_doc_length=math.fsum(lengths) / len(lengths),
        doc_freqs=doc_freqs,
        corpus_size=len(payload["ids"]),
        k1=payload["k1"],
        b=payload["b"],
    )
    return _finalize(index)
