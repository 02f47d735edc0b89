"""Attentive graph convolution: attention weights, propagation, scoring.

Attention weights are computed once from the layer-0 embeddings (the
relation projections are k x d, so they only apply to base embeddings) and
shared across all propagation layers. Propagation and scoring are pure
reads over an immutable (model, snapshot) pair and safe to run
concurrently across user partitions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..entities import EntityId, Relation, nudge as nudge_id_to_entity, user as user_id_to_entity
from ..graph import GraphSnapshot
from . import kernels
from .indexing import GraphIndex, build_index
from .params import (
    CONCAT_LINEAR,
    KNOWLEDGE_AWARE,
    SCOPE_ALL,
    ModelError,
    ModelState,
)


@dataclass(frozen=True, slots=True)
class ScoredPair:
    user: EntityId
    nudge: EntityId
    score: float


@dataclass(frozen=True, slots=True)
class RankError:
    user_id: str
    nudge_id: str
    reason: str


@dataclass(frozen=True)
class RankResult:
    per_user: dict[EntityId, tuple[ScoredPair, ...]]
    errors: tuple[RankError, ...] = ()


@dataclass(frozen=True)
class AttentionArrays:
    """Edge arrays the attention weights were computed over.

    `agg_offsets`/`tail` drive neighbor aggregation (per head); for graph
    attention they include the appended self-edges. `softmax_offsets` are
    the normalization segments (per head, or per (head, relation) group).
    """

    alpha: np.ndarray
    scores: np.ndarray
    head: np.ndarray
    tail: np.ndarray
    rel: np.ndarray | None
    agg_offsets: np.ndarray
    softmax_offsets: np.ndarray


@dataclass(frozen=True)
class LayerCache:
    h_in: np.ndarray
    neighbor_sum: np.ndarray
    combined: np.ndarray
    pre_activation: np.ndarray
    h_out: np.ndarray


@dataclass(frozen=True)
class ForwardCache:
    attention: AttentionArrays
    layers: tuple[LayerCache, ...] = field(default_factory=tuple)

    @property
    def final(self) -> np.ndarray:
        return self.layers[-1].h_out


def leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x >= 0.0, x, slope * x)


def compute_attention(state: ModelState, index: GraphIndex) -> AttentionArrays:
    hp = state.hp
    if hp.attention == KNOWLEDGE_AWARE:
        scores = kernels.knowledge_attention_scores(
            state.entity_emb,
            state.relation_emb,
            state.relation_proj,
            index.head,
            index.rel,
            index.tail,
        )
        softmax_offsets = (
            index.offsets if hp.attention_scope == SCOPE_ALL else index.head_rel_offsets
        )
        alpha = kernels.segment_softmax(scores, softmax_offsets)
        return AttentionArrays(
            alpha=alpha,
            scores=scores,
            head=index.head,
            tail=index.tail,
            rel=index.rel,
            agg_offsets=index.offsets,
            softmax_offsets=softmax_offsets,
        )
    head, tail, offsets = index.with_self_edges
    scores = kernels.graph_attention_scores(
        state.entity_emb, state.gat_proj, state.gat_attn, hp.leaky_slope, head, tail
    )
    alpha = kernels.segment_softmax(scores, offsets)
    return AttentionArrays(
        alpha=alpha,
        scores=scores,
        head=head,
        tail=tail,
        rel=None,
        agg_offsets=offsets,
        softmax_offsets=offsets,
    )


def forward(state: ModelState, index: GraphIndex) -> ForwardCache:
    """Run all layers, keeping per-layer intermediates for the backward pass."""
    attention = compute_attention(state, index)
    hp = state.hp
    h = state.entity_emb
    layers: list[LayerCache] = []
    for w in state.layer_weights:
        m = kernels.weighted_neighbor_sum(
            attention.alpha, attention.tail, attention.agg_offsets, h
        )
        if hp.aggregator == CONCAT_LINEAR:
            z = np.concatenate([h, m], axis=1)
        else:
            z = h + m
        pre = z @ w.T
        h_out = leaky_relu(pre, hp.leaky_slope)
        layers.append(
            LayerCache(h_in=h, neighbor_sum=m, combined=z, pre_activation=pre, h_out=h_out)
        )
        h = h_out
    return ForwardCache(attention=attention, layers=tuple(layers))


def propagate(state: ModelState, snapshot: GraphSnapshot) -> dict[EntityId, np.ndarray]:
    """Final-layer embeddings for every entity in the snapshot."""
    index = build_index(state, snapshot)
    final = forward(state, index).final
    return {e: final[state.entity_row(e)] for e in sorted(snapshot.entities)}


def attention_weights(
    state: ModelState,
    head: EntityId,
    neighbors: Sequence[tuple[Relation, EntityId]],
) -> list[float]:
    """Knowledge-aware attention weights over one head's neighbor list.

    Weights come back in input order and sum to 1 over each normalization
    segment (the full list by default, per-relation groups when the model
    is configured that way). Empty list -> empty output.
    """
    if not neighbors:
        return []
    head_row = state.entity_row(head)
    order = sorted(
        range(len(neighbors)),
        key=lambda i: (state.relation_row(neighbors[i][0].value), i),
    )
    heads = np.full(len(neighbors), head_row, dtype=np.int64)
    rels = np.array(
        [state.relation_row(neighbors[i][0].value) for i in order], dtype=np.int64
    )
    tails = np.array([state.entity_row(neighbors[i][1]) for i in order], dtype=np.int64)
    scores = kernels.knowledge_attention_scores(
        state.entity_emb, state.relation_emb, state.relation_proj, heads, rels, tails
    )
    if state.hp.attention_scope == SCOPE_ALL:
        offsets = np.array([0, len(neighbors)], dtype=np.int64)
    else:
        boundaries = np.flatnonzero(np.diff(rels)) + 1
        offsets = np.concatenate(([0], boundaries, [len(neighbors)])).astype(np.int64)
    alpha = kernels.segment_softmax(scores, offsets)
    out = np.empty(len(neighbors))
    out[np.array(order)] = alpha
    return out.tolist()


def gat_attention_weights(
    state: ModelState, head: EntityId, neighbors: Sequence[EntityId]
) -> list[float]:
    """Graph-attention weights with the self-edge appended last."""
    head_row = state.entity_row(head)
    tails = np.array(
        [state.entity_row(b) for b in neighbors] + [head_row], dtype=np.int64
    )
    heads = np.full(len(tails), head_row, dtype=np.int64)
    scores = kernels.graph_attention_scores(
        state.entity_emb, state.gat_proj, state.gat_attn, state.hp.leaky_slope, heads, tails
    )
    offsets = np.array([0, len(tails)], dtype=np.int64)
    return kernels.segment_softmax(scores, offsets).tolist()


def predict(
    state: ModelState,
    propagated: Mapping[EntityId, np.ndarray],
    user: EntityId,
    nudge: EntityId,
) -> float:
    try:
        e_u = propagated[user]
        e_i = propagated[nudge]
    except KeyError as exc:
        raise ModelError(f"no propagated embedding for {exc.args[0]}") from None
    return float(np.dot(e_u, e_i))


def rank_candidates(
    state: ModelState,
    snapshot: GraphSnapshot,
    candidates: Mapping[str, Iterable[str]],
    *,
    final_embeddings: np.ndarray | None = None,
) -> RankResult:
    """Score and sort each user's candidate nudges, highest first.

    Ties break by nudge id ascending so rankings are reproducible. Pairs
    naming entities the model does not cover are skipped and reported.
    `candidates` is a CandidateSet or a map of user id -> nudge ids;
    `final_embeddings` lets callers reuse one propagation across calls.
    """
    if hasattr(candidates, "as_id_map"):
        candidates = candidates.as_id_map()
    if final_embeddings is None:
        index = build_index(state, snapshot)
        final_embeddings = forward(state, index).final

    errors: list[RankError] = []
    u_rows: list[int] = []
    i_rows: list[int] = []
    pair_user: list[str] = []
    pair_nudge: list[str] = []

    user_ids = sorted(candidates)
    per_user: dict[EntityId, tuple[ScoredPair, ...]] = {}
    for uid in user_ids:
        u = user_id_to_entity(uid)
        if not state.has_entity(u) or not snapshot.has_entity(u):
            for nid in candidates[uid]:
                errors.append(RankError(uid, nid, f"unknown user {uid!r}"))
            continue
        per_user[u] = ()
        for nid in candidates[uid]:
            n = nudge_id_to_entity(nid)
            if not state.has_entity(n) or not snapshot.has_entity(n):
                errors.append(RankError(uid, nid, f"unknown nudge {nid!r}"))
                continue
            u_rows.append(state.entity_row(u))
            i_rows.append(state.entity_row(n))
            pair_user.append(uid)
            pair_nudge.append(nid)

    if not u_rows:
        return RankResult(per_user=per_user, errors=tuple(errors))

    u_arr = np.array(u_rows, dtype=np.int64)
    i_arr = np.array(i_rows, dtype=np.int64)
    scores = kernels.dot_scores(final_embeddings, u_arr, i_arr)
    if not np.all(np.isfinite(scores)):
        raise ModelError("non-finite candidate scores")

    user_key_of = {uid: i for i, uid in enumerate(user_ids)}
    nudge_sorted = sorted(set(pair_nudge))
    nudge_key_of = {nid: i for i, nid in enumerate(nudge_sorted)}
    user_keys = np.array([user_key_of[uid] for uid in pair_user], dtype=np.int64)
    nudge_keys = np.array([nudge_key_of[nid] for nid in pair_nudge], dtype=np.int64)
    order = np.lexsort((nudge_keys, -scores, user_keys))

    ranked: dict[EntityId, list[ScoredPair]] = {}
    for idx in order:
        uid = pair_user[idx]
        u = user_id_to_entity(uid)
        pair = ScoredPair(
            user=u, nudge=nudge_id_to_entity(pair_nudge[idx]), score=float(scores[idx])
        )
        ranked.setdefault(u, []).append(pair)
    for u, pairs in ranked.items():
        per_user[u] = tuple(pairs)
    return RankResult(per_user=per_user, errors=tuple(errors))
