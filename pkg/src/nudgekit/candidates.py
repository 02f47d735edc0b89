"""Per-user candidate nudges from declarative targeting rules.

A rule matches a user when the user is in ANY of the rule's target
segments (or the rule names none) AND holds ALL of its required markers.
A nudge with no constraints is a universal candidate. Evaluation always
reads the snapshot's current edges, so segment moves take effect on the
next generation pass with no caching staleness.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .entities import EntityId, EntityKind
from .graph import GraphSnapshot, UnknownEntityError
from .records import NudgeTemplate


@dataclass(frozen=True, slots=True)
class TargetingRule:
    nudge_id: str
    target_segments: tuple[str, ...] = ()  # ANY-of
    required_markers: tuple[str, ...] = ()  # ALL-of
    goal: str = ""

    def matches(self, user_segments: set[str], user_markers: set[str]) -> bool:
        if self.target_segments and not set(self.target_segments) & user_segments:
            return False
        return set(self.required_markers) <= user_markers


@dataclass(frozen=True, slots=True)
class CandidateEntry:
    nudge_id: str
    rule_index: int


@dataclass(frozen=True)
class CandidateSet:
    """Eligible nudges per user, each tagged with its generating rule."""

    per_user: dict[str, tuple[CandidateEntry, ...]]

    def nudge_ids(self, user_id: str) -> tuple[str, ...]:
        return tuple(e.nudge_id for e in self.per_user.get(user_id, ()))

    def as_id_map(self) -> dict[str, tuple[str, ...]]:
        return {uid: self.nudge_ids(uid) for uid in self.per_user}

    @property
    def total_pairs(self) -> int:
        return sum(len(v) for v in self.per_user.values())


def rules_from_library(templates: Iterable[NudgeTemplate]) -> list[TargetingRule]:
    return [
        TargetingRule(
            nudge_id=t.nudge_id,
            target_segments=t.target_segments,
            required_markers=t.required_markers,
            goal=t.goal,
        )
        for t in templates
    ]


def generate_candidates(
    snapshot: GraphSnapshot, rules: Sequence[TargetingRule], user: EntityId
) -> list[str]:
    """Nudge ids whose rules match the user's current markers and segments.

    Nudges matched by several rules are deduped keeping the first match.
    """
    if user.kind != EntityKind.USER or not snapshot.has_entity(user):
        raise UnknownEntityError(f"unknown user {user}")
    segments = snapshot.segments_of(user)
    markers = snapshot.markers_of(user)
    out: list[str] = []
    seen: set[str] = set()
    for rule in rules:
        if rule.nudge_id in seen:
            continue
        if rule.matches(segments, markers):
            out.append(rule.nudge_id)
            seen.add(rule.nudge_id)
    return out


def generate_candidate_set(
    snapshot: GraphSnapshot,
    rules: Sequence[TargetingRule],
    user_ids: Iterable[str] | None = None,
) -> CandidateSet:
    """Candidate sets for many users (all users in the snapshot by default)."""
    from .entities import user as user_entity

    if user_ids is None:
        users = snapshot.entities_of_kind(EntityKind.USER)
    else:
        users = [user_entity(uid) for uid in sorted(user_ids)]

    per_user: dict[str, tuple[CandidateEntry, ...]] = {}
    for u in users:
        segments = snapshot.segments_of(u)
        markers = snapshot.markers_of(u)
        entries: list[CandidateEntry] = []
        seen: set[str] = set()
        for idx, rule in enumerate(rules):
            if rule.nudge_id in seen:
                continue
            if rule.matches(segments, markers):
                entries.append(CandidateEntry(nudge_id=rule.nudge_id, rule_index=idx))
                seen.add(rule.nudge_id)
        per_user[u.local_id] = tuple(entries)
    return CandidateSet(per_user=per_user)
