# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled value-iteration sweep kernel (hot loop of the synthesis stage)."""

import numpy as np

cimport numpy as cnp


def backup_range(double[::1] data, int[::1] indices, long long[::1] indptr,
                 double[:, ::1] worst, double[:, ::1] delta,
                 int n_total, int nu, int nq,
                 int s_lo, int s_hi,
                 double[:, ::1] out_v, int[:, ::1] out_a,
                 double[::1] scratch):
    """Bellman backup for states s in [s_lo, s_hi).

    Rows are stored u-major (row index u*n_total + s) in CSR form; ``worst``
    is the (n_total, nq) table min over automaton successors of
    max(acceptance, value).  Writes values and argmax inputs in place; ties
    keep the smallest input index.  Releases the GIL, so disjoint ranges can
    run on a thread pool.
    """
    cdef Py_ssize_t s, u, q, k, row, col
    cdef long long k_lo, k_hi
    cdef double w, v
    with nogil:
        for s in range(s_lo, s_hi):
            for q in range(nq):
                out_v[s, q] = -1.0
                out_a[s, q] = 0
            for u in range(nu):
                row = u * n_total + s
                k_lo = indptr[row]
                k_hi = indptr[row + 1]
                for q in range(nq):
                    scratch[q] = 0.0
                for k in range(k_lo, k_hi):
                    w = data[k]
                    col = indices[k]
                    for q in range(nq):
                        scratch[q] += w * worst[col, q]
                for q in range(nq):
                    v = scratch[q] - delta[u, s]
                    if v < 0.0:
                        v = 0.0
                    elif v > 1.0:
                        v = 1.0
                    if v > out_v[s, q]:
                        out_v[s, q] = v
                        out_a[s, q] = <int> u
    return None
