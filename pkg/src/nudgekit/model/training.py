"""Pairwise-ranking training over the graph model.

Loss: -sum ln sigma(score(u, i+) - score(u, i-)) + l2 * ||theta||^2 over
observed positive interactions and negatives resampled uniformly each
epoch from the user's non-interacted nudges (optionally restricted to the
user's candidate set). One full-batch gradient step per epoch keeps runs
bit-reproducible for a given seed; the epoch loop stops at max_epochs or
when the relative epoch-over-epoch loss improvement drops below the
tolerance.

The backward pass is written out by hand (numpy + scipy.sparse) so every
gradient can be audited against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp
import scipy.special

from ..entities import EntityKind, Relation
from ..graph import GraphSnapshot
from .indexing import GraphIndex, build_index
from .network import ForwardCache, forward
from .params import (
    CONCAT_LINEAR,
    KNOWLEDGE_AWARE,
    HyperParams,
    ModelError,
    ModelState,
    init_embeddings,
)


class TrainingError(ModelError):
    pass


@dataclass(frozen=True)
class TrainingTelemetry:
    epochs_run: int
    final_loss: float
    losses: tuple[float, ...]
    converged: bool
    records: tuple[dict, ...]


def active_param_names(hp: HyperParams) -> list[str]:
    """Parameter tensors that participate in the configured forward pass."""
    names = ["entity_emb"]
    if hp.attention == KNOWLEDGE_AWARE:
        names += ["relation_emb", "relation_proj"]
    else:
        names += ["gat_proj", "gat_attn"]
    names += [f"layer_{i}" for i in range(hp.num_layers)]
    return names


def _leaky_grad(pre: np.ndarray, slope: float) -> np.ndarray:
    return np.where(pre >= 0.0, 1.0, slope)


def _softmax_backward(
    alpha: np.ndarray, g_alpha: np.ndarray, offsets: np.ndarray
) -> np.ndarray:
    num_segments = offsets.shape[0] - 1
    seg_ids = np.repeat(np.arange(num_segments, dtype=np.int64), np.diff(offsets))
    seg_dot = np.bincount(seg_ids, weights=alpha * g_alpha, minlength=num_segments)
    return alpha * (g_alpha - seg_dot[seg_ids])


def loss_value(
    state: ModelState,
    index: GraphIndex,
    triples: tuple[np.ndarray, np.ndarray, np.ndarray],
    cache: ForwardCache | None = None,
) -> float:
    """Forward-only loss evaluation (ranking term + active-parameter L2)."""
    hp = state.hp
    u_rows, p_rows, n_rows = triples
    if cache is None:
        cache = forward(state, index)
    final = cache.final
    delta = np.einsum("pd,pd->p", final[u_rows], final[p_rows]) - np.einsum(
        "pd,pd->p", final[u_rows], final[n_rows]
    )
    rank_loss = float(np.logaddexp(0.0, -delta).sum())
    arrays = state.named_arrays()
    reg = sum(float(np.sum(arrays[n] * arrays[n])) for n in active_param_names(hp))
    return rank_loss + hp.l2_weight * reg


def loss_and_gradients(
    state: ModelState,
    index: GraphIndex,
    triples: tuple[np.ndarray, np.ndarray, np.ndarray],
    cache: ForwardCache | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Full loss and analytic gradients for the given (u, i+, i-) row triples."""
    hp = state.hp
    u_rows, p_rows, n_rows = triples
    if cache is None:
        cache = forward(state, index)
    att = cache.attention
    final = cache.final

    # Ranking term.
    y_pos = np.einsum("pd,pd->p", final[u_rows], final[p_rows])
    y_neg = np.einsum("pd,pd->p", final[u_rows], final[n_rows])
    delta = y_pos - y_neg
    rank_loss = float(np.logaddexp(0.0, -delta).sum())
    g_delta = -scipy.special.expit(-delta)  # sigma(delta) - 1, overflow-safe

    g_final = np.zeros_like(final)
    np.add.at(g_final, u_rows, g_delta[:, None] * (final[p_rows] - final[n_rows]))
    np.add.at(g_final, p_rows, g_delta[:, None] * final[u_rows])
    np.add.at(g_final, n_rows, -g_delta[:, None] * final[u_rows])

    grads: dict[str, np.ndarray] = {}
    n_entities = state.entity_emb.shape[0]
    adj = sp.csr_matrix(
        (att.alpha, att.tail, att.agg_offsets), shape=(n_entities, n_entities)
    )
    adj_t = adj.T.tocsr()

    # Layers, top down. Attention weights are shared across layers so their
    # gradient accumulates over every layer's aggregation.
    g_alpha = np.zeros_like(att.alpha)
    g_h = g_final
    for l in range(hp.num_layers - 1, -1, -1):
        layer = cache.layers[l]
        w = state.layer_weights[l]
        d_pre = g_h * _leaky_grad(layer.pre_activation, hp.leaky_slope)
        grads[f"layer_{l}"] = d_pre.T @ layer.combined
        g_z = d_pre @ w
        if hp.aggregator == CONCAT_LINEAR:
            width = layer.h_in.shape[1]
            g_hin = g_z[:, :width].copy()
            g_m = g_z[:, width:]
        else:
            g_hin = g_z.copy()
            g_m = g_z
        g_alpha += np.einsum(
            "ed,ed->e", layer.h_in[att.tail], g_m[att.head]
        )
        g_hin += np.asarray(adj_t @ g_m)
        g_h = g_hin

    g_entity = g_h.copy()  # layer-0 h_in is the base embedding table
    g_scores = _softmax_backward(att.alpha, g_alpha, att.softmax_offsets)

    if hp.attention == KNOWLEDGE_AWARE:
        g_rel = np.zeros_like(state.relation_emb)
        g_proj = np.zeros_like(state.relation_proj)
        for r in np.unique(att.rel):
            m = att.rel == r
            heads, tails = att.head[m], att.tail[m]
            w_r = state.relation_proj[r]
            q = state.entity_emb[heads] @ w_r.T + state.relation_emb[r]
            t = np.tanh(q)
            p_t = state.entity_emb[tails] @ w_r.T
            gs = g_scores[m][:, None]
            g_pt = gs * t
            g_q = gs * p_t * (1.0 - t * t)
            np.add.at(g_entity, tails, g_pt @ w_r)
            np.add.at(g_entity, heads, g_q @ w_r)
            g_rel[r] = g_q.sum(axis=0)
            g_proj[r] = g_pt.T @ state.entity_emb[tails] + g_q.T @ state.entity_emb[heads]
        grads["relation_emb"] = g_rel
        grads["relation_proj"] = g_proj
    else:
        we = state.entity_emb @ state.gat_proj.T
        d = we.shape[1]
        a_head, a_tail = state.gat_attn[:d], state.gat_attn[d:]
        raw = we @ a_head
        raw_tail = we @ a_tail
        pre = raw[att.head] + raw_tail[att.tail]
        g_raw = g_scores * _leaky_grad(pre, hp.leaky_slope)
        g_u1 = np.bincount(att.head, weights=g_raw, minlength=n_entities)
        g_u2 = np.bincount(att.tail, weights=g_raw, minlength=n_entities)
        g_we = np.outer(g_u1, a_head) + np.outer(g_u2, a_tail)
        grads["gat_attn"] = np.concatenate([we.T @ g_u1, we.T @ g_u2])
        grads["gat_proj"] = g_we.T @ state.entity_emb
        g_entity += g_we @ state.gat_proj

    grads["entity_emb"] = g_entity

    # L2 over the active parameter tensors.
    arrays = state.named_arrays()
    reg = 0.0
    for name in active_param_names(hp):
        theta = arrays[name]
        reg += float(np.sum(theta * theta))
        grads[name] = grads[name] + 2.0 * hp.l2_weight * theta
    return rank_loss + hp.l2_weight * reg, grads


@dataclass(frozen=True)
class _TrainingSet:
    pos_users: np.ndarray  # (P,) entity rows
    pos_nudges: np.ndarray  # (P,)
    flat_pools: np.ndarray  # all users' negative pools concatenated
    pool_start: np.ndarray  # (P,) offset of this positive's pool
    pool_len: np.ndarray  # (P,) length of this positive's pool


def _build_training_set(
    state: ModelState,
    snapshot: GraphSnapshot,
    hp: HyperParams,
    candidates: Mapping[str, list[str] | tuple[str, ...]] | None,
) -> _TrainingSet:
    positive_relations = {Relation(name) for name in hp.positive_relations}
    positives: set[tuple] = set()
    interacted: dict = {}
    for t in snapshot.interactions():
        interacted.setdefault(t.head, set()).add(t.tail)
        if t.relation in positive_relations:
            positives.add((t.head, t.tail))
    if not positives:
        raise TrainingError("nothing to train on: no positive interaction edges")

    all_nudges = snapshot.entities_of_kind(EntityKind.NUDGE)
    pos_sorted = sorted(positives)
    flat_pools: list[int] = []
    pool_span: dict = {}  # user -> (start, length)
    kept_u: list[int] = []
    kept_n: list[int] = []
    kept_start: list[int] = []
    kept_len: list[int] = []
    for u, n in pos_sorted:
        if u not in pool_span:
            if candidates is not None and u.local_id in candidates:
                allowed = set(candidates[u.local_id])
                universe = [nid for nid in all_nudges if nid.local_id in allowed]
            else:
                universe = all_nudges
            pool = [
                state.entity_row(nid)
                for nid in universe
                if nid not in interacted.get(u, ())
            ]
            pool_span[u] = (len(flat_pools), len(pool))
            flat_pools.extend(pool)
        start, length = pool_span[u]
        if length == 0:
            continue
        kept_u.append(state.entity_row(u))
        kept_n.append(state.entity_row(n))
        kept_start.append(start)
        kept_len.append(length)
    if not kept_u:
        raise TrainingError(
            "nothing to train on: every positive user has an empty negative pool"
        )
    return _TrainingSet(
        pos_users=np.array(kept_u, dtype=np.int64),
        pos_nudges=np.array(kept_n, dtype=np.int64),
        flat_pools=np.array(flat_pools, dtype=np.int64),
        pool_start=np.array(kept_start, dtype=np.int64),
        pool_len=np.array(kept_len, dtype=np.int64),
    )


def _sample_triples(
    ts: _TrainingSet, num_negatives: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    reps = num_negatives
    u = np.repeat(ts.pos_users, reps)
    p = np.repeat(ts.pos_nudges, reps)
    starts = np.repeat(ts.pool_start, reps)
    lengths = np.repeat(ts.pool_len, reps)
    draws = rng.integers(0, lengths)  # one uniform draw per triple
    return u, p, ts.flat_pools[starts + draws]


def train(
    snapshot: GraphSnapshot,
    hp: HyperParams,
    init: ModelState | None = None,
    *,
    candidates: Mapping[str, list[str] | tuple[str, ...]] | None = None,
    epoch_callback: Callable[[int, ModelState, dict], None] | None = None,
) -> tuple[ModelState, TrainingTelemetry]:
    """Fit the model on the snapshot's positive interactions.

    `init` defaults to a fresh Xavier state; when given (warm start) its
    architecture must match `hp`, whose training knobs take effect.
    `candidates` optionally restricts each user's negative-sampling pool.
    Fixed seed + fixed data reproduce identical telemetry and parameters.
    """
    if init is None:
        state = init_embeddings(snapshot, hp)
    else:
        if init.hp.layer_weight_shapes() != hp.layer_weight_shapes() or (
            init.hp.entity_dim,
            init.hp.relation_dim,
        ) != (hp.entity_dim, hp.relation_dim):
            raise TrainingError("init state architecture does not match hyperparams")
        state = replace(init.copy(), hp=hp)

    index = build_index(state, snapshot)
    training_set = _build_training_set(state, snapshot, hp, candidates)
    rng = np.random.default_rng(hp.seed)
    active = active_param_names(hp)

    # Convergence is judged on a fixed monitor sample so successive epoch
    # losses are comparable; gradient steps still see fresh negatives.
    monitor_triples = _sample_triples(training_set, hp.num_negatives, rng)

    losses: list[float] = []
    records: list[dict] = []
    converged = False
    for epoch in range(hp.max_epochs):
        triples = _sample_triples(training_set, hp.num_negatives, rng)
        cache = forward(state, index)
        # Monitor loss is evaluated at the state entering the epoch, from the
        # same forward pass the step uses.
        loss = loss_value(state, index, monitor_triples, cache=cache)
        step_loss, grads = loss_and_gradients(state, index, triples, cache=cache)
        # The loss is a sum over triples, so the raw gradient grows with the
        # interaction count; normalizing the step keeps one learning rate
        # usable across dataset sizes without changing the objective.
        step = hp.learning_rate / max(1, len(triples[0]))
        arrays = state.named_arrays()
        updated = {name: arrays[name] - step * grads[name] for name in active}
        state = replace(
            state,
            entity_emb=updated.get("entity_emb", state.entity_emb),
            relation_emb=updated.get("relation_emb", state.relation_emb),
            relation_proj=updated.get("relation_proj", state.relation_proj),
            gat_proj=updated.get("gat_proj", state.gat_proj),
            gat_attn=updated.get("gat_attn", state.gat_attn),
            layer_weights=tuple(
                updated.get(f"layer_{i}", w) for i, w in enumerate(state.layer_weights)
            ),
        )
        state.assert_finite()
        losses.append(loss)
        record = {"epoch": epoch, "loss": loss, "step_loss": step_loss}
        if epoch_callback is not None:
            epoch_callback(epoch, state, record)
        records.append(record)
        if len(losses) >= 2:
            prev, cur = losses[-2], losses[-1]
            improvement = (prev - cur) / max(abs(prev), 1e-12)
            if improvement < hp.tolerance:
                converged = True
                break

    final_loss = loss_value(state, index, monitor_triples)
    telemetry = TrainingTelemetry(
        epochs_run=len(losses),
        final_loss=final_loss,
        losses=tuple(losses) + (final_loss,),
        converged=converged,
        records=tuple(records),
    )
    return state, telemetry
