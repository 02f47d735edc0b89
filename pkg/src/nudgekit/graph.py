"""Dynamic heterogeneous graph of users, nudges, markers, topics, segments.

Snapshots are immutable: any update produces a new snapshot at a later
logical day index, sharing unchanged triplets structurally. Many readers
may score against one snapshot concurrently; a single writer advances time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

from .catalog import MarkerCatalog
from .entities import (
    EntityId,
    EntityKind,
    GraphError,
    GraphStats,
    Relation,
    Triplet,
    goal,
    marker,
    nudge,
    segment,
    topic,
    user,
)
from .records import InteractionEvent, NudgeTemplate, ParticipantRecord


class UnknownEntityError(GraphError):
    pass


class StaleTimeError(GraphError):
    pass


@dataclass(frozen=True)
class GraphSnapshot:
    """The graph at logical day `time`: entities, triplets, adjacency index."""

    time: int
    entities: frozenset[EntityId]
    triplets: tuple[Triplet, ...]
    _adjacency: dict[EntityId, tuple[tuple[Relation, EntityId], ...]] = field(
        init=False, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        seen: dict[tuple, Triplet] = {}
        adjacency: dict[EntityId, list[tuple[Relation, EntityId]]] = {}
        for t in self.triplets:
            if t.head not in self.entities or t.tail not in self.entities:
                raise UnknownEntityError(f"triplet endpoint missing from entity set: {t}")
            if t.observed_at > self.time:
                raise StaleTimeError(
                    f"triplet observed at day {t.observed_at} is later than snapshot day {self.time}"
                )
            if t.key in seen:
                raise GraphError(f"duplicate triplet {t.key}")
            seen[t.key] = t
            adjacency.setdefault(t.head, []).append((t.relation, t.tail))
        object.__setattr__(
            self, "_adjacency", {h: tuple(pairs) for h, pairs in adjacency.items()}
        )

    # -- queries ---------------------------------------------------------

    def neighbors(self, head: EntityId) -> tuple[tuple[Relation, EntityId], ...]:
        return self._adjacency.get(head, ())

    def has_entity(self, entity: EntityId) -> bool:
        return entity in self.entities

    def entities_of_kind(self, kind: EntityKind) -> list[EntityId]:
        return sorted(e for e in self.entities if e.kind == kind)

    def markers_of(self, u: EntityId) -> set[str]:
        return {
            t.local_id for r, t in self.neighbors(u) if r == Relation.HAS_MARKER
        }

    def segments_of(self, u: EntityId) -> set[str]:
        return {
            t.local_id for r, t in self.neighbors(u) if r == Relation.IN_SEGMENT
        }

    def interactions(self, relations: Iterable[Relation] | None = None) -> list[Triplet]:
        """User->nudge triplets, optionally restricted to given relations."""
        wanted = set(relations) if relations is not None else None
        return [
            t
            for t in self.triplets
            if t.head.kind == EntityKind.USER
            and t.tail.kind == EntityKind.NUDGE
            and (wanted is None or t.relation in wanted)
        ]

    def stats(self) -> GraphStats:
        n = len(self.entities)
        e = len(self.triplets)
        density = Fraction(e, n * (n - 1)) if n > 1 else Fraction(0)
        return GraphStats(node_count=n, edge_count=e, density=density)

    def export_triplets(self, path) -> None:
        """Tab-separated (head_kind, head_id, relation, tail_kind, tail_id, day)."""
        rows = sorted(
            self.triplets, key=lambda t: (t.head, t.relation.value, t.tail)
        )
        with open(path, "w", encoding="utf-8") as fh:
            for t in rows:
                fh.write(
                    "\t".join(
                        (
                            t.head.kind.value,
                            t.head.local_id,
                            t.relation.value,
                            t.tail.kind.value,
                            t.tail.local_id,
                            str(t.observed_at),
                        )
                    )
                    + "\n"
                )


@dataclass(frozen=True, slots=True)
class RejectedEvent:
    event: InteractionEvent
    reason: str


@dataclass(frozen=True, slots=True)
class ConstructResult:
    snapshot: GraphSnapshot
    rejected_events: tuple[RejectedEvent, ...]


def _user_marker_triplets(
    u: EntityId, markers: set[str], day: int
) -> list[Triplet]:
    return [
        Triplet(u, Relation.HAS_MARKER, marker(label), observed_at=day)
        for label in sorted(markers)
    ]


def _user_segment_triplets(
    u: EntityId, markers: set[str], catalog: MarkerCatalog, day: int
) -> list[Triplet]:
    return [
        Triplet(u, Relation.IN_SEGMENT, segment(s.name), observed_at=day)
        for s in catalog.segments_for(markers)
    ]


def construct_graph(
    nudge_library: Iterable[NudgeTemplate],
    participants: Iterable[ParticipantRecord],
    interactions: Iterable[InteractionEvent],
    catalog: MarkerCatalog,
    *,
    time: int | None = None,
    include_sent: bool = False,
) -> ConstructResult:
    """Build a snapshot from ingested data.

    One user node per participant, one nudge node per template; all catalog
    markers/topics and all defined segments are materialized so targeting
    rules resolve even before any user holds a marker. Interaction events
    referencing unknown users or nudges are collected as rejections and
    construction continues; a field value not covered by its catalog rule
    is a hard error. Repeated events for one (user, relation, nudge)
    collapse to a single edge keeping the latest day; `sent` events become
    edges only when include_sent is set.
    """
    templates = list(nudge_library)
    people = list(participants)
    events = list(interactions)

    if time is None:
        time = max((e.day for e in events), default=0)

    entities: set[EntityId] = set()
    triplets: dict[tuple, Triplet] = {}

    def add(t: Triplet) -> None:
        prev = triplets.get(t.key)
        if prev is None or t.observed_at > prev.observed_at:
            triplets[t.key] = t

    for label, topic_name in catalog.all_markers():
        m = marker(label)
        entities.update((m, topic(topic_name)))
        add(Triplet(m, Relation.MARKER_IN_TOPIC, topic(topic_name)))
    for seg in catalog.segments:
        entities.add(segment(seg.name))

    user_ids: set[str] = set()
    for person in people:
        u = user(person.user_id)
        user_ids.add(person.user_id)
        entities.add(u)
        user_markers = catalog.markers_for(person.fields)
        for t in _user_marker_triplets(u, user_markers, time):
            entities.add(t.tail)
            add(t)
        for t in _user_segment_triplets(u, user_markers, catalog, time):
            add(t)

    nudge_ids: set[str] = set()
    for template in templates:
        n = nudge(template.nudge_id)
        nudge_ids.add(template.nudge_id)
        entities.add(n)
        g = goal(template.goal)
        entities.add(g)
        add(Triplet(n, Relation.HAS_GOAL, g))
        for seg_name in template.target_segments:
            s = segment(seg_name)
            entities.add(s)
            add(Triplet(n, Relation.TARGETS_SEGMENT, s))

    rejected: list[RejectedEvent] = []
    for event in events:
        if event.user_id not in user_ids:
            rejected.append(RejectedEvent(event, f"unknown user {event.user_id!r}"))
            continue
        if event.nudge_id not in nudge_ids:
            rejected.append(RejectedEvent(event, f"unknown nudge {event.nudge_id!r}"))
            continue
        if event.event == Relation.SENT and not include_sent:
            continue
        add(
            Triplet(
                user(event.user_id), event.event, nudge(event.nudge_id), observed_at=event.day
            )
        )

    snapshot = GraphSnapshot(
        time=time, entities=frozenset(entities), triplets=tuple(triplets.values())
    )
    return ConstructResult(snapshot=snapshot, rejected_events=tuple(rejected))


def update_markers(
    snapshot: GraphSnapshot,
    u: EntityId,
    new_raw_fields: Mapping[str, object],
    catalog: MarkerCatalog,
    new_time: int,
) -> GraphSnapshot:
    """Advance the graph one step with fresh data for one user.

    The user's has_marker edges are replaced to match the new raw fields
    and in_segment edges recomputed; every other edge is carried over
    untouched. Applying the same fields twice yields edge-identical
    snapshots (only the day index differs).
    """
    if u not in snapshot.entities:
        raise UnknownEntityError(f"unknown user {u}")
    if u.kind != EntityKind.USER:
        raise UnknownEntityError(f"{u} is not a user")
    if new_time <= snapshot.time:
        raise StaleTimeError(
            f"new_time {new_time} must be later than snapshot time {snapshot.time}"
        )

    new_markers = catalog.markers_for(dict(new_raw_fields))

    kept = [
        t
        for t in snapshot.triplets
        if not (t.head == u and t.relation in (Relation.HAS_MARKER, Relation.IN_SEGMENT))
    ]
    # Carry over the original observation day for unchanged marker edges so a
    # no-op update is edge-identical, not merely edge-equivalent.
    old_marker_days = {
        t.tail.local_id: t.observed_at
        for t in snapshot.triplets
        if t.head == u and t.relation == Relation.HAS_MARKER
    }
    old_segment_days = {
        t.tail.local_id: t.observed_at
        for t in snapshot.triplets
        if t.head == u and t.relation == Relation.IN_SEGMENT
    }

    entities = set(snapshot.entities)
    fresh: list[Triplet] = []
    for label in sorted(new_markers):
        day = old_marker_days.get(label, new_time)
        m = marker(label)
        entities.add(m)
        fresh.append(Triplet(u, Relation.HAS_MARKER, m, observed_at=day))
    for seg in catalog.segments_for(new_markers):
        day = old_segment_days.get(seg.name, new_time)
        s = segment(seg.name)
        entities.add(s)
        fresh.append(Triplet(u, Relation.IN_SEGMENT, s, observed_at=day))

    return GraphSnapshot(
        time=new_time, entities=frozenset(entities), triplets=tuple(kept) + tuple(fresh)
    )


def triplet_diff(
    old: GraphSnapshot, new: GraphSnapshot
) -> tuple[set[tuple], set[tuple]]:
    """(added, removed) triplet keys between two snapshots."""
    old_keys = {t.key for t in old.triplets}
    new_keys = {t.key for t in new.triplets}
    return new_keys - old_keys, old_keys - new_keys
