import numpy as np
import pytest

from nudgekit.catalog import Bucket, MarkerCatalog, MarkerRule, SegmentDef
from nudgekit.entities import Relation, Triplet, goal, marker, nudge, segment, topic, user
from nudgekit.graph import GraphSnapshot
from nudgekit.records import InteractionEvent, NudgeTemplate, ParticipantRecord


@pytest.fixture
def tiny_catalog() -> MarkerCatalog:
    """Three-field catalog matching the worked marker examples."""
    rules = (
        MarkerRule(
            field_name="age",
            topic="demographics",
            buckets=(
                Bucket("age: <20", upper=20),
                Bucket("age: 20s", lower=20, upper=30),
                Bucket("age: 30s", lower=30, upper=40),
                Bucket("age: 40s", lower=40, upper=60),
                Bucket("age: 60s+", lower=60),
            ),
        ),
        MarkerRule(
            field_name="bmi",
            topic="anthropometrics",
            buckets=(
                Bucket("BMI: underweight", upper=18.5),
                Bucket("BMI: normal", lower=18.5, upper=25),
                Bucket("BMI: overweight", lower=25),
            ),
        ),
        MarkerRule(
            field_name="weekly_mean_steps",
            topic="activity",
            buckets=(
                Bucket("steps: <1k", upper=1750),
                Bucket("steps: 2.5k", lower=1750, upper=3750),
                Bucket("steps: 5k", lower=3750, upper=8750),
                Bucket("steps: 10k", lower=8750, upper=11250),
                Bucket("steps: 12.5k+", lower=11250),
            ),
        ),
    )
    segments = (
        SegmentDef(
            name="Inactive Young Adults",
            required_markers=frozenset({"age: 30s", "steps: 2.5k"}),
        ),
        SegmentDef(
            name="Active Young Adults",
            required_markers=frozenset({"age: 30s", "steps: 10k"}),
        ),
        SegmentDef(
            name="Inactive Seniors",
            required_markers=frozenset({"age: 60s+", "steps: <1k"}),
        ),
    )
    return MarkerCatalog(rules=rules, segments=segments)


@pytest.fixture
def tiny_library() -> list[NudgeTemplate]:
    return [
        NudgeTemplate(
            nudge_id="n1",
            goal="steps",
            text="A quick walk adds up fast.",
        ),
        NudgeTemplate(
            nudge_id="n2",
            goal="steps",
            text="You averaged {{avg_daily_steps}} daily steps. Keep moving!",
            target_segments=("Inactive Young Adults",),
        ),
        NudgeTemplate(
            nudge_id="n3",
            goal="mvpa",
            text="Try a 10 minute workout today.",
            required_markers=("age: 60s+", "steps: <1k"),
        ),
    ]


@pytest.fixture
def tiny_participants() -> list[ParticipantRecord]:
    return [
        ParticipantRecord(
            "u1", {"age": 34, "bmi": 22, "weekly_mean_steps": 2500, "avg_daily_steps": 2500}
        ),
        ParticipantRecord(
            "u2", {"age": 67, "bmi": 24, "weekly_mean_steps": 900, "avg_daily_steps": 900}
        ),
        ParticipantRecord(
            "u3", {"age": 29, "bmi": 27, "weekly_mean_steps": 9500, "avg_daily_steps": 9500}
        ),
    ]


@pytest.fixture
def tiny_events() -> list[InteractionEvent]:
    return [
        InteractionEvent("u1", "n1", Relation.OPENED, day=1),
        InteractionEvent("u1", "n1", Relation.RATED_USEFUL, day=1),
        InteractionEvent("u2", "n1", Relation.OPENED, day=2),
        InteractionEvent("u3", "n2", Relation.OPENED, day=3),
    ]


def build_snapshot(triplets: list[Triplet], time: int | None = None) -> GraphSnapshot:
    entities = set()
    for t in triplets:
        entities.add(t.head)
        entities.add(t.tail)
    if time is None:
        time = max((t.observed_at for t in triplets), default=0)
    return GraphSnapshot(time=time, entities=frozenset(entities), triplets=tuple(triplets))


def four_node_snapshot() -> GraphSnapshot:
    u1, n1, m1, s1 = user("u1"), nudge("n1"), marker("m1"), segment("s1")
    triplets = [
        Triplet(u1, Relation.HAS_MARKER, m1),
        Triplet(u1, Relation.IN_SEGMENT, s1),
        Triplet(u1, Relation.OPENED, n1),
        Triplet(n1, Relation.TARGETS_SEGMENT, s1),
    ]
    return build_snapshot(triplets)


def random_snapshot(rng: np.random.Generator, max_extra_edges: int = 12) -> GraphSnapshot:
    """A small random heterogeneous graph with valid signatures."""
    n_users = int(rng.integers(2, 5))
    n_nudges = int(rng.integers(2, 5))
    n_markers = int(rng.integers(1, 4))
    n_segments = int(rng.integers(1, 3))
    n_topics = int(rng.integers(1, 3))
    users = [user(f"u{i}") for i in range(n_users)]
    nudges = [nudge(f"n{i}") for i in range(n_nudges)]
    markers = [marker(f"m{i}") for i in range(n_markers)]
    segments = [segment(f"s{i}") for i in range(n_segments)]
    topics = [topic(f"t{i}") for i in range(n_topics)]
    goals = [goal("steps"), goal("mvpa")]

    triplets: dict = {}

    def add(head, relation, tail):
        t = Triplet(head, relation, tail)
        triplets[t.key] = t

    for u in users:
        add(u, Relation.HAS_MARKER, markers[int(rng.integers(0, n_markers))])
        if rng.random() < 0.8:
            add(u, Relation.IN_SEGMENT, segments[int(rng.integers(0, n_segments))])
    for m in markers:
        add(m, Relation.MARKER_IN_TOPIC, topics[int(rng.integers(0, n_topics))])
    for n in nudges:
        add(n, Relation.HAS_GOAL, goals[int(rng.integers(0, 2))])
        if rng.random() < 0.7:
            add(n, Relation.TARGETS_SEGMENT, segments[int(rng.integers(0, n_segments))])
    interaction_relations = [
        Relation.OPENED,
        Relation.RATED_USEFUL,
        Relation.RATED_NOT_USEFUL,
    ]
    for _ in range(int(rng.integers(1, max_extra_edges))):
        u = users[int(rng.integers(0, n_users))]
        n = nudges[int(rng.integers(0, n_nudges))]
        r = interaction_relations[int(rng.integers(0, 3))]
        add(u, r, n)

    entities = set(users + nudges + markers + segments + topics + goals)
    return GraphSnapshot(
        time=0, entities=frozenset(entities), triplets=tuple(triplets.values())
    )
