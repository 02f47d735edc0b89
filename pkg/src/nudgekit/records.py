"""Ingestion record types and their line-delimited file formats.

One JSON object per line, stable field names:

participants.jsonl   {"user_id": "u0001", "fields": {"age": 34, ...}}
nudges.jsonl         {"nudge_id": "n001", "goal": "steps", "text": "...",
                      "target_segments": [...], "required_markers": [...]}
events.jsonl         {"user_id": "u0001", "nudge_id": "n001",
                      "event": "opened", "day": 3}

IDs are pseudonymous masks; records never carry names, addresses or other
personally identifiable fields.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .entities import INTERACTION_RELATIONS, Relation

EVENT_NAMES = sorted(r.value for r in INTERACTION_RELATIONS)


class RecordError(Exception):
    pass


@dataclass(frozen=True, slots=True)
class ParticipantRecord:
    user_id: str
    fields: dict[str, object] = field(default_factory=dict)


@dataclass(frozen=True, slots=True)
class InteractionEvent:
    user_id: str
    nudge_id: str
    event: Relation
    day: int

    def __post_init__(self) -> None:
        if self.event not in INTERACTION_RELATIONS:
            raise RecordError(f"{self.event!r} is not an interaction event type")


@dataclass(frozen=True, slots=True)
class NudgeTemplate:
    """Authored nudge: goal, templated text, and its targeting rule.

    target_segments: user qualifies when in ANY of them.
    required_markers: user must hold ALL of them.
    Both empty -> the nudge is a universal candidate.
    """

    nudge_id: str
    goal: str
    text: str
    target_segments: tuple[str, ...] = ()
    required_markers: tuple[str, ...] = ()


def _parse_lines(path: Path) -> Iterator[tuple[int, dict]]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            if not isinstance(obj, dict):
                raise RecordError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def participant_from_dict(obj: dict) -> ParticipantRecord:
    try:
        user_id = str(obj["user_id"])
    except KeyError:
        raise RecordError("participant record missing user_id") from None
    fields = obj.get("fields", {})
    if not isinstance(fields, dict):
        raise RecordError(f"participant {user_id}: fields must be an object")
    return ParticipantRecord(user_id=user_id, fields=dict(fields))


def event_from_dict(obj: dict) -> InteractionEvent:
    missing = [k for k in ("user_id", "nudge_id", "event", "day") if k not in obj]
    if missing:
        raise RecordError(f"event record missing {', '.join(missing)}")
    name = str(obj["event"])
    try:
        relation = Relation(name)
    except ValueError:
        raise RecordError(f"unknown event type {name!r}") from None
    return InteractionEvent(
        user_id=str(obj["user_id"]),
        nudge_id=str(obj["nudge_id"]),
        event=relation,
        day=int(obj["day"]),
    )


def template_from_dict(obj: dict) -> NudgeTemplate:
    missing = [k for k in ("nudge_id", "goal", "text") if k not in obj]
    if missing:
        raise RecordError(f"nudge record missing {', '.join(missing)}")
    return NudgeTemplate(
        nudge_id=str(obj["nudge_id"]),
        goal=str(obj["goal"]),
        text=str(obj["text"]),
        target_segments=tuple(obj.get("target_segments", []) or ()),
        required_markers=tuple(obj.get("required_markers", []) or ()),
    )


def read_participants(path) -> list[ParticipantRecord]:
    return [participant_from_dict(obj) for _, obj in _parse_lines(Path(path))]


def read_events(path) -> list[InteractionEvent]:
    return [event_from_dict(obj) for _, obj in _parse_lines(Path(path))]


def read_nudge_library(path) -> list[NudgeTemplate]:
    return [template_from_dict(obj) for _, obj in _parse_lines(Path(path))]


def _dump_lines(path, objs: Iterable[dict], append: bool = False) -> None:
    mode = "a" if append else "w"
    with open(path, mode, encoding="utf-8") as fh:
        for obj in objs:
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def write_participants(records: Iterable[ParticipantRecord], path) -> None:
    _dump_lines(path, ({"user_id": r.user_id, "fields": r.fields} for r in records))


def write_events(events: Iterable[InteractionEvent], path, append: bool = False) -> None:
    _dump_lines(
        path,
        (
            {"user_id": e.user_id, "nudge_id": e.nudge_id, "event": e.event.value, "day": e.day}
            for e in events
        ),
        append=append,
    )


def write_nudge_library(templates: Iterable[NudgeTemplate], path) -> None:
    _dump_lines(
        path,
        (
            {
                "nudge_id": t.nudge_id,
                "goal": t.goal,
                "text": t.text,
                "target_segments": list(t.target_segments),
                "required_markers": list(t.required_markers),
            }
            for t in templates
        ),
    )
