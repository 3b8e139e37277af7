#!/usr/bin/env python3
"""Benchmark the compiled BM25 scoring kernel against the numpy fallback.

Builds a synthetic corpus, scores a batch of queries against every document
through both kernel implementations, checks they agree bitwise, and reports
throughput. Usage:

    python benchmarks/bench_bm25.py --docs 50000 --queries 200
"""

import argparse
import random
import time

import numpy as np

from iclsel.retrieval import _bm25_py
from iclsel.retrieval.bm25 import build_bm25

try:
    from iclsel.retrieval import _bm25_kernel
except ImportError:
    _bm25_kernel = None


def synthetic_corpus(n_docs: int, vocab_size: int, doc_len: int, seed: int):
    rng = random.Random(seed)
    vocab = [f"w{i}" for i in range(vocab_size)]
    # zipf-ish skew so postings lists have realistic shape
    weights = [1.0 / (i + 1) for i in range(vocab_size)]
    return [
        (f"d{i}", " ".join(rng.choices(vocab, weights=weights, k=doc_len)))
        for i in range(n_docs)
    ]


def run(impl, index, queries, repeats: int) -> tuple[float, np.ndarray]:
    checksum = None
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        for qtids in queries:
            out = np.zeros(index.corpus_size, dtype=np.float64)
            if qtids.size:
                impl.score_all(qtids, index._indptr, index._post_docs,
                               index._post_tfs, index._idf, index._norm,
                               index.k1 + 1.0, out)
        best = min(best, time.perf_counter() - start)
        checksum = out
    return best, checksum


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--docs", type=int, default=50_000)
    parser.add_argument("--vocab", type=int, default=5_000)
    parser.add_argument("--doc-len", type=int, default=60)
    parser.add_argument("--queries", type=int, default=200)
    parser.add_argument("--query-len", type=int, default=6)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    print(f"building index over {args.docs} docs ...")
    corpus = synthetic_corpus(args.docs, args.vocab, args.doc_len, args.seed)
    index = build_bm25(corpus)

    rng = random.Random(args.seed + 1)
    queries = []
    for _ in range(args.queries):
        terms = [f"w{rng.randrange(args.vocab)}" for _ in range(args.query_len)]
        queries.append(np.asarray(
            [index._term_to_tid[t] for t in terms if t in index._term_to_tid],
            dtype=np.int32))

    py_time, py_out = run(_bm25_py, index, queries, args.repeats)
    print(f"numpy fallback : {py_time:.3f}s  "
          f"({args.queries / py_time:.1f} queries/s)")

    if _bm25_kernel is None:
        print("compiled kernel: not built (pip install -e . compiles it)")
        return

    cy_time, cy_out = run(_bm25_kernel, index, queries, args.repeats)
    print(f"compiled kernel: {cy_time:.3f}s  "
          f"({args.queries / cy_time:.1f} queries/s)")
    print(f"speedup        : {py_time / cy_time:.2f}x")
    agree = np.array_equal(py_out, cy_out)
    print(f"bitwise agree  : {agree}")
    if not agree:
        raise SystemExit("kernel outputs diverged")


if __name__ == "__main__":
    main()
