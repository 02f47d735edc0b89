"""Typed entities and relations of the heterogeneous nudging graph.

Every node carries a kind and a pseudonymous local id; every edge is a
directed, relation-labelled triplet with a fixed (head kind, tail kind)
signature. IDs are opaque masks: the data model has no place for names,
addresses or other personally identifiable fields.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from fractions import Fraction


class EntityKind(str, Enum):
    USER = "user"
    NUDGE = "nudge"
    MARKER = "marker"
    TOPIC = "topic"
    SEGMENT = "segment"
    GOAL = "goal"


class Relation(str, Enum):
    SENT = "sent"
    OPENED = "opened"
    RATED_USEFUL = "rated_useful"
    RATED_NOT_USEFUL = "rated_not_useful"
    HAS_MARKER = "has_marker"
    MARKER_IN_TOPIC = "marker_in_topic"
    IN_SEGMENT = "in_segment"
    TARGETS_SEGMENT = "targets_segment"
    HAS_GOAL = "has_goal"


#: Fixed (head kind, tail kind) signature per relation. Triplets violating
#: their relation's signature are rejected at construction time.
RELATION_SIGNATURES: dict[Relation, tuple[EntityKind, EntityKind]] = {
    Relation.SENT: (EntityKind.USER, EntityKind.NUDGE),
    Relation.OPENED: (EntityKind.USER, EntityKind.NUDGE),
    Relation.RATED_USEFUL: (EntityKind.USER, EntityKind.NUDGE),
    Relation.RATED_NOT_USEFUL: (EntityKind.USER, EntityKind.NUDGE),
    Relation.HAS_MARKER: (EntityKind.USER, EntityKind.MARKER),
    Relation.MARKER_IN_TOPIC: (EntityKind.MARKER, EntityKind.TOPIC),
    Relation.IN_SEGMENT: (EntityKind.USER, EntityKind.SEGMENT),
    Relation.TARGETS_SEGMENT: (EntityKind.NUDGE, EntityKind.SEGMENT),
    Relation.HAS_GOAL: (EntityKind.NUDGE, EntityKind.GOAL),
}

#: Relations that record a user interacting with a nudge.
INTERACTION_RELATIONS: frozenset[Relation] = frozenset(
    {Relation.SENT, Relation.OPENED, Relation.RATED_USEFUL, Relation.RATED_NOT_USEFUL}
)


class GraphError(Exception):
    """Base class for graph construction and update failures."""


class SignatureError(GraphError):
    """A triplet's endpoint kinds do not match the relation's signature."""


@dataclass(frozen=True, slots=True)
class EntityId:
    kind: EntityKind
    local_id: str

    def __post_init__(self) -> None:
        if not self.local_id:
            raise ValueError("entity local_id must be non-empty")
        if any(c in self.local_id for c in "\t\n\r"):
            raise ValueError(f"entity local_id contains control characters: {self.local_id!r}")

    def __lt__(self, other: "EntityId") -> bool:
        return (self.kind.value, self.local_id) < (other.kind.value, other.local_id)

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.local_id}"


def user(local_id: str) -> EntityId:
    return EntityId(EntityKind.USER, local_id)


def nudge(local_id: str) -> EntityId:
    return EntityId(EntityKind.NUDGE, local_id)


def marker(local_id: str) -> EntityId:
    return EntityId(EntityKind.MARKER, local_id)


def topic(local_id: str) -> EntityId:
    return EntityId(EntityKind.TOPIC, local_id)


def segment(local_id: str) -> EntityId:
    return EntityId(EntityKind.SEGMENT, local_id)


def goal(local_id: str) -> EntityId:
    return EntityId(EntityKind.GOAL, local_id)


@dataclass(frozen=True, slots=True)
class Triplet:
    """Directed edge (head, relation, tail) observed at a logical day index."""

    head: EntityId
    relation: Relation
    tail: EntityId
    observed_at: int = 0

    def __post_init__(self) -> None:
        expected = RELATION_SIGNATURES[self.relation]
        actual = (self.head.kind, self.tail.kind)
        if actual != expected:
            raise SignatureError(
                f"{self.relation.value} expects {expected[0].value}->{expected[1].value}, "
                f"got {actual[0].value}->{actual[1].value}"
            )

    @property
    def key(self) -> tuple[EntityId, Relation, EntityId]:
        return (self.head, self.relation, self.tail)


@dataclass(frozen=True, slots=True)
class GraphStats:
    """Exact node/edge counts plus density as a ratio.

    density = edges / (nodes * (nodes - 1)) for the directed graph, kept as
    a Fraction so density * nodes * (nodes - 1) == edges holds exactly.
    Graphs with fewer than two nodes report density 0 by convention.
    """

    node_count: int
    edge_count: int
    density: Fraction

    @property
    def density_float(self) -> float:
        return float(self.density)
