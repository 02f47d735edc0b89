"""Offline evaluation: holdout splits, top-k ranking metrics, grid search.

Metrics use binary relevance. precision@k averages over every user in the
recommendation map; recall@k, NDCG@k and MAP average over users with at
least one relevant item (their denominators are undefined otherwise).
NDCG discounts hits by 1/log2(position + 1) and normalizes by the ideal
DCG at the cutoff; average precision is truncated at the same cutoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence, TypeVar

import numpy as np

from .catalog import MarkerCatalog
from .entities import EntityKind, Relation
from .graph import GraphSnapshot, construct_graph
from .model.indexing import build_index
from .model.network import forward
from .model import kernels
from .model.params import HyperParams, ModelState
from .model.training import TrainingError, train
from .records import InteractionEvent, NudgeTemplate, ParticipantRecord

T = TypeVar("T")


class EvaluationError(Exception):
    pass


@dataclass(frozen=True)
class HoldoutSplit:
    train: tuple
    test: tuple
    hide_fraction: float
    seed: int


def holdout_split(
    interactions: Sequence[T], fraction: float, seed: int
) -> HoldoutSplit:
    """Uniform random partition hiding ~fraction of the interactions."""
    if not 0.0 < fraction < 1.0:
        raise EvaluationError("hide fraction must be in (0, 1)")
    n = len(interactions)
    if n < 2:
        raise EvaluationError("need at least 2 interactions to split")
    n_test = int(round(fraction * n))
    n_test = min(max(n_test, 1), n - 1)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    test_idx = set(order[:n_test].tolist())
    train = tuple(interactions[i] for i in range(n) if i not in test_idx)
    test = tuple(interactions[i] for i in range(n) if i in test_idx)
    return HoldoutSplit(train=train, test=test, hide_fraction=fraction, seed=seed)


@dataclass(frozen=True)
class MetricReport:
    precision_at_k: float
    recall_at_k: float
    ndcg_at_k: float
    mean_average_precision: float
    k: int

    def as_dict(self) -> dict:
        return {
            "precision_at_k": self.precision_at_k,
            "recall_at_k": self.recall_at_k,
            "ndcg_at_k": self.ndcg_at_k,
            "mean_average_precision": self.mean_average_precision,
            "k": self.k,
        }


def _user_metrics(ranked: Sequence[str], relevant: set[str], k: int) -> tuple[float, float, float, float]:
    top = list(ranked[:k])
    hits = [item in relevant for item in top]
    n_hits = sum(hits)
    precision = n_hits / k
    if not relevant:
        return precision, 0.0, 0.0, 0.0
    recall = n_hits / len(relevant)
    dcg = sum(1.0 / math.log2(pos + 2) for pos, hit in enumerate(hits) if hit)
    ideal = sum(1.0 / math.log2(pos + 2) for pos in range(min(k, len(relevant))))
    ndcg = dcg / ideal if ideal > 0 else 0.0
    running_hits = 0
    ap_sum = 0.0
    for pos, hit in enumerate(hits, start=1):
        if hit:
            running_hits += 1
            ap_sum += running_hits / pos
    ap = ap_sum / min(len(relevant), k)
    return precision, recall, ndcg, ap


def metrics_at_k(
    recommended: Mapping[str, Sequence[str]],
    relevant: Mapping[str, set[str]],
    k: int,
) -> MetricReport:
    if k < 1:
        raise EvaluationError("k must be >= 1")
    if not recommended:
        return MetricReport(0.0, 0.0, 0.0, 0.0, k)
    precisions: list[float] = []
    recalls: list[float] = []
    ndcgs: list[float] = []
    aps: list[float] = []
    for user_id in sorted(recommended):
        rel = set(relevant.get(user_id, set()))
        p, r, n, a = _user_metrics(recommended[user_id], rel, k)
        precisions.append(p)
        if rel:
            recalls.append(r)
            ndcgs.append(n)
            aps.append(a)
    return MetricReport(
        precision_at_k=float(np.mean(precisions)) if precisions else 0.0,
        recall_at_k=float(np.mean(recalls)) if recalls else 0.0,
        ndcg_at_k=float(np.mean(ndcgs)) if ndcgs else 0.0,
        mean_average_precision=float(np.mean(aps)) if aps else 0.0,
        k=k,
    )


# -- model evaluation on a holdout ------------------------------------------


def positive_pairs(
    events: Sequence[InteractionEvent], positive_relations: Sequence[str]
) -> list[tuple[str, str]]:
    """Deduplicated (user, nudge) pairs counted as positives, sorted."""
    wanted = {Relation(name) for name in positive_relations}
    return sorted({(e.user_id, e.nudge_id) for e in events if e.event in wanted})


def recommend_top_k(
    state: ModelState,
    snapshot: GraphSnapshot,
    users: Sequence[str],
    k: int,
    exclude: Mapping[str, set[str]] | None = None,
) -> dict[str, list[str]]:
    """Top-k nudges per user over the full library, minus excluded ids."""
    from .entities import user as user_entity

    index = build_index(state, snapshot)
    final = forward(state, index).final
    nudge_entities = snapshot.entities_of_kind(EntityKind.NUDGE)
    nudge_rows = np.array([state.entity_row(n) for n in nudge_entities], dtype=np.int64)
    nudge_ids = [n.local_id for n in nudge_entities]

    out: dict[str, list[str]] = {}
    for user_id in users:
        u = user_entity(user_id)
        if not state.has_entity(u):
            continue
        u_rows = np.full(len(nudge_rows), state.entity_row(u), dtype=np.int64)
        scores = kernels.dot_scores(final, u_rows, nudge_rows)
        banned = exclude.get(user_id, set()) if exclude else set()
        order = np.lexsort((np.arange(len(nudge_ids)), -scores))
        picks: list[str] = []
        for idx in order:
            nid = nudge_ids[idx]
            if nid in banned:
                continue
            picks.append(nid)
            if len(picks) == k:
                break
        out[user_id] = picks
    return out


def evaluate_split(
    state: ModelState,
    snapshot_train: GraphSnapshot,
    test_pairs: Sequence[tuple[str, str]],
    train_pairs: Sequence[tuple[str, str]],
    k: int = 3,
) -> MetricReport:
    """Rank against the train graph and score the held-out pairs.

    Each user's known train positives are excluded from their ranking.
    """
    relevant: dict[str, set[str]] = {}
    for user_id, nudge_id in test_pairs:
        relevant.setdefault(user_id, set()).add(nudge_id)
    exclude: dict[str, set[str]] = {}
    for user_id, nudge_id in train_pairs:
        exclude.setdefault(user_id, set()).add(nudge_id)
    users = sorted(relevant)
    recommended = recommend_top_k(state, snapshot_train, users, k, exclude=exclude)
    return metrics_at_k(recommended, relevant, k)


# -- grid search --------------------------------------------------------------


@dataclass(frozen=True)
class GridRow:
    hp: HyperParams
    report: MetricReport | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.report is not None


@dataclass(frozen=True)
class GridResult:
    rows: tuple[GridRow, ...]
    best: GridRow


def table_search_space(base: HyperParams) -> list[HyperParams]:
    """The full dimension/layer search grid, carrying base training knobs."""
    entity_dims = [16, 32, 64]
    relation_dims = [16, 32, 64]
    layer_configs = [
        (16,),
        (32,),
        (64,),
        (32, 16),
        (64, 32),
        (64, 32, 16),
        (32, 16, 8),
    ]
    return [
        replace(base, entity_dim=d, relation_dim=k, layer_dims=layers)
        for d in entity_dims
        for k in relation_dims
        for layers in layer_configs
    ]


def strip_interactions(
    snapshot: GraphSnapshot, pairs: set[tuple[str, str]]
) -> GraphSnapshot:
    """The snapshot minus all user->nudge edges for the given pairs."""
    kept = tuple(
        t
        for t in snapshot.triplets
        if not (
            t.head.kind == EntityKind.USER
            and t.tail.kind == EntityKind.NUDGE
            and (t.head.local_id, t.tail.local_id) in pairs
        )
    )
    return GraphSnapshot(time=snapshot.time, entities=snapshot.entities, triplets=kept)


def grid_search(
    space: Sequence[HyperParams],
    snapshot: GraphSnapshot,
    split: HoldoutSplit,
    k: int = 3,
) -> GridResult:
    """Train/evaluate every configuration; pick the best precision@k.

    `split` holds deduplicated (user, nudge) interaction pairs; the test
    pairs' edges are hidden from the training graph. Ties prefer fewer
    layers, then smaller entity dim. Configurations that fail to train
    become failed rows and the search continues.
    """
    if not space:
        raise EvaluationError("empty search space")
    test_pairs = list(split.test)
    train_pairs = list(split.train)
    snapshot_train = strip_interactions(snapshot, set(test_pairs))
    rows: list[GridRow] = []
    for hp in space:
        try:
            state, _ = train(snapshot_train, hp)
            report = evaluate_split(state, snapshot_train, test_pairs, train_pairs, k=k)
            rows.append(GridRow(hp=hp, report=report))
        except (TrainingError, MemoryError) as exc:
            rows.append(GridRow(hp=hp, report=None, error=str(exc)))
    ok_rows = [r for r in rows if r.ok]
    if not ok_rows:
        raise EvaluationError("every grid configuration failed to train")
    best = min(
        ok_rows,
        key=lambda r: (
            -r.report.precision_at_k,  # type: ignore[union-attr]
            len(r.hp.layer_dims),
            r.hp.entity_dim,
        ),
    )
    return GridResult(rows=tuple(rows), best=best)


def grid_table_lines(result: GridResult, delimiter: str = ",") -> list[str]:
    """Delimited report: layers, dims, hidden layout, precision@k, status."""
    lines = [
        delimiter.join(
            (
                "layers",
                "entity_dim",
                "relation_dim",
                "hidden_dims",
                "precision_at_3",
                "status",
            )
        )
    ]
    for row in result.rows:
        hidden = "[" + " ".join(str(d) for d in row.hp.layer_dims) + "]"
        if row.ok:
            value = f"{row.report.precision_at_k:.4f}"  # type: ignore[union-attr]
            status = "ok"
        else:
            value = ""
            status = f"failed: {row.error}"
        lines.append(
            delimiter.join(
                (
                    str(len(row.hp.layer_dims)),
                    str(row.hp.entity_dim),
                    str(row.hp.relation_dim),
                    hidden,
                    value,
                    status,
                )
            )
        )
    return lines


def metric_stability(records: Sequence[Mapping[str, float]], window: int | None = None) -> dict[str, float]:
    """Standard deviation of each metric over the trailing window."""
    if not records:
        return {}
    rows = records[-window:] if window else records
    keys = sorted({k for row in rows for k in row if isinstance(row[k], (int, float))})
    return {
        k: float(np.std([row[k] for row in rows if k in row], ddof=0)) for k in keys
    }


def build_eval_snapshot(
    templates: Sequence[NudgeTemplate],
    participants: Sequence[ParticipantRecord],
    events: Sequence[InteractionEvent],
    catalog: MarkerCatalog,
    held_out_pairs: set[tuple[str, str]],
) -> GraphSnapshot:
    """Construct the train graph: all edges except held-out interactions."""
    kept = [e for e in events if (e.user_id, e.nudge_id) not in held_out_pairs]
    result = construct_graph(templates, participants, kept, catalog)
    return result.snapshot
