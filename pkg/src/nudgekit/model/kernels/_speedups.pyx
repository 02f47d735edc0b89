# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: edge attention scores, segment softmax, neighbor
aggregation and pairwise dot scoring over flat CSR arrays."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, tanh

cnp.import_array()


# The relation-projected score kernel is intentionally absent here: its
# cost is dominated by dense projections and tanh, which run fastest
# through numpy's BLAS/SIMD paths. The backend selector falls back to the
# numpy implementation for any kernel this module does not define.


def graph_attention_scores(
    double[:, ::1] entity_emb,
    double[:, ::1] proj,
    double[::1] attn,
    double slope,
    long long[::1] head,
    long long[::1] tail,
):
    # Projected attention halves per entity: u1[a] = attn[:d] . (W e_a),
    # u2[b] = attn[d:] . (W e_b); score = leakyrelu(u1[head] + u2[tail]).
    cdef Py_ssize_t d = entity_emb.shape[1]
    cdef Py_ssize_t n_edges = head.shape[0]
    we = np.asarray(entity_emb) @ np.asarray(proj).T
    a_np = np.asarray(attn)
    u1_arr = np.ascontiguousarray(we @ a_np[:d])
    u2_arr = np.ascontiguousarray(we @ a_np[d:])
    cdef double[::1] u1 = u1_arr
    cdef double[::1] u2 = u2_arr
    out_arr = np.empty(n_edges, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t e
    cdef double s

    with nogil:
        for e in range(n_edges):
            s = u1[head[e]] + u2[tail[e]]
            out[e] = s if s >= 0.0 else slope * s
    return out_arr


def segment_softmax(double[::1] scores, long long[::1] offsets):
    cdef Py_ssize_t n_segments = offsets.shape[0] - 1
    out_arr = np.empty(scores.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t s, e
    cdef long long lo, hi
    cdef double smax, denom

    with nogil:
        for s in range(n_segments):
            lo = offsets[s]
            hi = offsets[s + 1]
            if hi <= lo:
                continue
            smax = scores[lo]
            for e in range(lo + 1, hi):
                if scores[e] > smax:
                    smax = scores[e]
            denom = 0.0
            for e in range(lo, hi):
                out[e] = exp(scores[e] - smax)
                denom += out[e]
            for e in range(lo, hi):
                out[e] /= denom
    return out_arr


def weighted_neighbor_sum(
    double[::1] weights,
    long long[::1] tail,
    long long[::1] offsets,
    double[:, ::1] h,
):
    cdef Py_ssize_t n_rows = offsets.shape[0] - 1
    cdef Py_ssize_t dim = h.shape[1]
    out_arr = np.zeros((n_rows, dim), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t a, j
    cdef long long e, lo, hi, b
    cdef double w

    with nogil:
        for a in range(n_rows):
            lo = offsets[a]
            hi = offsets[a + 1]
            for e in range(lo, hi):
                w = weights[e]
                b = tail[e]
                for j in range(dim):
                    out[a, j] += w * h[b, j]
    return out_arr


def dot_scores(double[:, ::1] emb, long long[::1] u_idx, long long[::1] i_idx):
    cdef Py_ssize_t n_pairs = u_idx.shape[0]
    cdef Py_ssize_t dim = emb.shape[1]
    out_arr = np.empty(n_pairs, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t p, j
    cdef long long u, i
    cdef double s

    with nogil:
        for p in range(n_pairs):
            u = u_idx[p]
            i = i_idx[p]
            s = 0.0
            for j in range(dim):
                s += emb[u, j] * emb[i, j]
            out[p] = s
    return out_arr
