"""Flat-array view of a snapshot, aligned with a model's row order.

Edges are sorted by (head row, relation row, tail row) into CSR layout so
attention softmax and neighbor aggregation run over contiguous segments.
The graph-attention variant appends one self-edge per entity (self last
within each head's segment).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..entities import EntityKind
from ..graph import GraphSnapshot
from .params import ModelError, ModelState


@dataclass(frozen=True)
class GraphIndex:
    state: ModelState
    snapshot: GraphSnapshot
    head: np.ndarray  # (E,) int64 entity rows
    rel: np.ndarray  # (E,) int64 relation rows
    tail: np.ndarray  # (E,) int64 entity rows
    offsets: np.ndarray  # (N+1,) int64 CSR indptr over head

    @property
    def num_entities(self) -> int:
        return len(self.state.entity_ids)

    @property
    def num_edges(self) -> int:
        return int(self.head.shape[0])

    @cached_property
    def head_rel_offsets(self) -> np.ndarray:
        """Indptr over contiguous (head, relation) groups (per-relation scope)."""
        if self.num_edges == 0:
            return np.zeros(1, dtype=np.int64)
        keys = self.head * len(self.state.relation_names) + self.rel
        boundaries = np.flatnonzero(np.diff(keys)) + 1
        return np.concatenate(([0], boundaries, [self.num_edges])).astype(np.int64)

    @cached_property
    def head_rel_group_of_edge(self) -> np.ndarray:
        """Group index per edge for the per-relation softmax scope."""
        groups = self.head_rel_offsets
        return np.repeat(
            np.arange(len(groups) - 1, dtype=np.int64), np.diff(groups)
        )

    @cached_property
    def with_self_edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(head, tail, offsets) with a self-edge appended per entity."""
        n = self.num_entities
        counts = np.diff(self.offsets) + 1
        offsets = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
        head = np.repeat(np.arange(n, dtype=np.int64), counts)
        tail = np.empty(offsets[-1], dtype=np.int64)
        for a in range(n):
            lo, hi = self.offsets[a], self.offsets[a + 1]
            tail[offsets[a] : offsets[a + 1] - 1] = self.tail[lo:hi]
            tail[offsets[a + 1] - 1] = a
        return head, tail, offsets

    @cached_property
    def user_rows(self) -> np.ndarray:
        return np.array(
            [
                i
                for i, e in enumerate(self.state.entity_ids)
                if e.kind == EntityKind.USER and self.snapshot.has_entity(e)
            ],
            dtype=np.int64,
        )

    @cached_property
    def nudge_rows(self) -> np.ndarray:
        return np.array(
            [
                i
                for i, e in enumerate(self.state.entity_ids)
                if e.kind == EntityKind.NUDGE and self.snapshot.has_entity(e)
            ],
            dtype=np.int64,
        )


def build_index(state: ModelState, snapshot: GraphSnapshot) -> GraphIndex:
    missing = [e for e in snapshot.entities if not state.has_entity(e)]
    if missing:
        raise ModelError(
            f"model does not cover {len(missing)} snapshot entities "
            f"(e.g. {sorted(missing)[0]}); warm-start the model first"
        )
    rows = []
    for t in snapshot.triplets:
        rows.append(
            (
                state.entity_row(t.head),
                state.relation_row(t.relation.value),
                state.entity_row(t.tail),
            )
        )
    n = len(state.entity_ids)
    if rows:
        arr = np.array(sorted(rows), dtype=np.int64)
        head = np.ascontiguousarray(arr[:, 0])
        rel = np.ascontiguousarray(arr[:, 1])
        tail = np.ascontiguousarray(arr[:, 2])
    else:
        head = rel = tail = np.zeros(0, dtype=np.int64)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.add.at(offsets, head + 1, 1)
    offsets = np.cumsum(offsets).astype(np.int64)
    return GraphIndex(
        state=state, snapshot=snapshot, head=head, rel=rel, tail=tail, offsets=offsets
    )
