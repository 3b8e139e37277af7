# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled BM25 scoring kernel.

Accumulates, for every document, the contribution of each query term from a
flattened inverted index (CSR layout). This is the hot inner loop when
scoring a whole corpus per query; the numpy fallback in _bm25_py mirrors the
exact operation order so results are bit-identical.
"""


def score_all(const int[::1] qtids, const long long[::1] indptr,
              const int[::1] docs, const double[::1] tfs,
              const double[::1] idf, const double[::1] norm,
              double k1p1, double[::1] out):
    cdef Py_ssize_t i, j
    cdef long long lo, hi
    cdef int t, d
    cdef double idf_t, tf
    for i in range(qtids.shape[0]):
        t = qtids[i]
        idf_t = idf[t]
        lo = indptr[t]
        hi = indptr[t + 1]
        for j in range(lo, hi):
            d = docs[j]
            tf = tfs[j]
            out[d] += idf_t * tf * k1p1 / (tf + norm[d])
