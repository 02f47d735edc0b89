import json

import pytest

from nudgekit.entities import Relation
from nudgekit.records import (
    InteractionEvent,
    NudgeTemplate,
    ParticipantRecord,
    RecordError,
    read_events,
    read_nudge_library,
    read_participants,
    write_events,
    write_nudge_library,
    write_participants,
)
from nudgekit.telemetry import append_records, read_records


def test_participant_round_trip(tmp_path):
    records = [
        ParticipantRecord("u1", {"age": 30, "bmi": 21.5}),
        ParticipantRecord("u2", {"age": 61}),
    ]
    path = tmp_path / "participants.jsonl"
    write_participants(records, path)
    assert read_participants(path) == records


def test_event_round_trip(tmp_path):
    events = [
        InteractionEvent("u1", "n1", Relation.OPENED, 3),
        InteractionEvent("u1", "n2", Relation.RATED_NOT_USEFUL, 4),
    ]
    path = tmp_path / "events.jsonl"
    write_events(events, path)
    assert read_events(path) == events
    write_events([InteractionEvent("u2", "n1", Relation.SENT, 5)], path, append=True)
    assert len(read_events(path)) == 3


def test_nudge_library_round_trip(tmp_path):
    templates = [
        NudgeTemplate(
            "n1",
            "steps",
            "Walk {{avg_daily_steps}}!",
            target_segments=("Active Seniors",),
            required_markers=("age: 60s+",),
        )
    ]
    path = tmp_path / "nudges.jsonl"
    write_nudge_library(templates, path)
    assert read_nudge_library(path) == templates


def test_invalid_event_type_rejected():
    with pytest.raises(RecordError):
        InteractionEvent("u1", "n1", Relation.HAS_MARKER, 0)


def test_malformed_line_reports_position(tmp_path):
    path = tmp_path / "events.jsonl"
    path.write_text('{"user_id": "u1"}\n')
    with pytest.raises(RecordError, match="missing"):
        read_events(path)
    path.write_text("not json\n")
    with pytest.raises(RecordError, match=":1:"):
        read_events(path)


def test_unknown_event_name(tmp_path):
    path = tmp_path / "events.jsonl"
    path.write_text(json.dumps({"user_id": "u", "nudge_id": "n", "event": "liked", "day": 1}))
    with pytest.raises(RecordError, match="liked"):
        read_events(path)


def test_telemetry_append_and_read(tmp_path):
    path = tmp_path / "telemetry" / "log.jsonl"
    append_records(path, [{"epoch": 0, "loss": 1.5}])
    append_records(path, [{"epoch": 1, "loss": 1.2}])
    records = read_records(path)
    assert [r["epoch"] for r in records] == [0, 1]
    assert read_records(tmp_path / "missing.jsonl") == []
