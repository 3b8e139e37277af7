"""Numpy fallback for the BM25 scoring kernel.

Mirrors the compiled kernel operation for operation (per query term, one
elementwise pass over that term's postings), so both produce bit-identical
scores: IEEE arithmetic in the same order.
"""

from __future__ import annotations

import numpy as np


def score_all(qtids, indptr, docs, tfs, idf, norm, k1p1, out) -> None:
    for t in qtids:
        lo, hi = indptr[t], indptr[t + 1]
        d = docs[lo:hi]
        tf = tfs[lo:hi]
        out[d] += idf[t] * tf * k1p1 / (tf + norm[d])
