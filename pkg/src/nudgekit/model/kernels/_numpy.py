"""Pure numpy/scipy reference implementation of the hot kernels.

Functionally identical to the compiled backend; used as the import-time
fallback and as the comparison baseline in the kernel benchmark.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def knowledge_attention_scores(entity_emb, relation_emb, relation_proj, head, rel, tail):
    """Raw relation-projected attention score per edge.

    score(a, r, b) = (W_r e_b)^T tanh(W_r e_a + e_r)
    """
    scores = np.empty(head.shape[0], dtype=np.float64)
    for r in np.unique(rel):
        m = rel == r
        w = relation_proj[r]
        proj_head = entity_emb[head[m]] @ w.T + relation_emb[r]
        proj_tail = entity_emb[tail[m]] @ w.T
        scores[m] = np.einsum("ek,ek->e", proj_tail, np.tanh(proj_head))
    return scores


def graph_attention_scores(entity_emb, proj, attn, slope, head, tail):
    """Raw graph-attention score per edge.

    score(a, b) = leakyrelu(attn . [W e_a || W e_b])
    """
    we = entity_emb @ proj.T
    d = we.shape[1]
    raw = we @ attn[:d]
    raw_tail = we @ attn[d:]
    s = raw[head] + raw_tail[tail]
    return np.where(s >= 0.0, s, slope * s)


def segment_softmax(scores, offsets):
    """Softmax within each contiguous [offsets[i], offsets[i+1]) segment."""
    num_segments = offsets.shape[0] - 1
    seg_ids = np.repeat(np.arange(num_segments, dtype=np.int64), np.diff(offsets))
    smax = np.full(num_segments, -np.inf)
    np.maximum.at(smax, seg_ids, scores)
    ex = np.exp(scores - smax[seg_ids])
    denom = np.bincount(seg_ids, weights=ex, minlength=num_segments)
    return ex / denom[seg_ids]


def weighted_neighbor_sum(weights, tail, offsets, h):
    """out[a] = sum over a's edge segment of weight_e * h[tail_e]."""
    n_rows = offsets.shape[0] - 1
    mat = sp.csr_matrix(
        (weights, tail, offsets), shape=(n_rows, h.shape[0])
    )
    return np.asarray(mat @ h)


def dot_scores(emb, u_idx, i_idx):
    """Pairwise dot products emb[u] . emb[i]."""
    return np.einsum("pd,pd->p", emb[u_idx], emb[i_idx])
