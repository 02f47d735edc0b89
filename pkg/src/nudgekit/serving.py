"""Serving layer: expose the day's nudges, ingest feedback and participant
data, close the loop.

The store is a thin stateless front over the day's output files plus
append-only logs — no database. Reads are safe concurrently; feedback
appends are serialized through a lock; participant ingestion is meant to
run between daily cycles.

Files under the data directory:
  selections_<day>.jsonl   the day's generated nudges (pipeline output)
  run_<day>.json           run manifest: user list + telemetry counters
  feedback.jsonl           accepted feedback events (append-only)
  fetches.jsonl            delivery fetch marks (append-only)
  participants_staged.jsonl  validated records awaiting the next cycle
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, fields as dataclass_fields
from pathlib import Path
from typing import Iterable

from .catalog import CatalogGapError, MarkerCatalog
from .records import (
    InteractionEvent,
    ParticipantRecord,
    RecordError,
    event_from_dict,
    participant_from_dict,
)
from .runner import RunResult, write_selections

#: Field names that must never appear in serving record schemas.
PII_FIELD_NAMES = frozenset(
    {
        "name",
        "first_name",
        "last_name",
        "full_name",
        "address",
        "street",
        "email",
        "phone",
        "phone_number",
        "ssn",
        "national_id",
        "date_of_birth",
    }
)


class ServingError(Exception):
    pass


class UnknownUserError(ServingError):
    pass


class RunUnavailableError(ServingError):
    pass


@dataclass(frozen=True, slots=True)
class NudgeDelivery:
    user_id: str
    nudge_id: str
    text: str
    day: int
    status: str  # "generated" | "fetched"


@dataclass(frozen=True, slots=True)
class FeedbackRejection:
    index: int
    reason: str


@dataclass(frozen=True, slots=True)
class FeedbackResult:
    accepted: int
    rejections: tuple[FeedbackRejection, ...]
    events: tuple[InteractionEvent, ...]


@dataclass(frozen=True, slots=True)
class IngestResult:
    accepted: int
    records: tuple[ParticipantRecord, ...]
    rejections: tuple[tuple[int, str], ...]  # (line number, reason)


class ServingStore:
    def __init__(self, data_dir) -> None:
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._write_lock = threading.Lock()

    # -- paths -------------------------------------------------------------

    def _selections_path(self, day: int) -> Path:
        return self.data_dir / f"selections_{day}.jsonl"

    def _manifest_path(self, day: int) -> Path:
        return self.data_dir / f"run_{day}.json"

    @property
    def feedback_path(self) -> Path:
        return self.data_dir / "feedback.jsonl"

    @property
    def fetches_path(self) -> Path:
        return self.data_dir / "fetches.jsonl"

    @property
    def staged_participants_path(self) -> Path:
        return self.data_dir / "participants_staged.jsonl"

    # -- publishing a run ----------------------------------------------------

    def publish_run(self, result: RunResult) -> None:
        write_selections(result, self._selections_path(result.day))
        manifest = {
            "day": result.day,
            "users": sorted(result.selections),
            "telemetry": result.telemetry.as_dict(),
        }
        with open(self._manifest_path(result.day), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, sort_keys=True)

    def has_run(self, day: int) -> bool:
        return self._manifest_path(day).exists()

    def _manifest(self, day: int) -> dict:
        try:
            with open(self._manifest_path(day), "r", encoding="utf-8") as fh:
                return json.load(fh)
        except FileNotFoundError:
            raise RunUnavailableError(f"no batch run published for day {day}") from None

    def days_published(self) -> list[int]:
        out = []
        for path in self.data_dir.glob("run_*.json"):
            try:
                out.append(int(path.stem.split("_", 1)[1]))
            except ValueError:
                continue
        return sorted(out)

    # -- deliveries ----------------------------------------------------------

    def _fetched_keys(self) -> set[tuple[str, str, int]]:
        out = set()
        if self.fetches_path.exists():
            with open(self.fetches_path, "r", encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        out.add((rec["user_id"], rec["nudge_id"], rec["day"]))
        return out

    def get_nudges(self, user_id: str, day: int) -> list[NudgeDelivery]:
        """The user's selection for the day; marks entries fetched (once)."""
        manifest = self._manifest(day)
        if user_id not in set(manifest["users"]):
            raise UnknownUserError(f"unknown user {user_id!r} for day {day}")
        deliveries: list[NudgeDelivery] = []
        fetched = self._fetched_keys()
        new_marks = []
        path = self._selections_path(day)
        if path.exists():
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    rec = json.loads(line)
                    if rec["user_id"] != user_id:
                        continue
                    key = (user_id, rec["nudge_id"], day)
                    status = "fetched" if key in fetched else "generated"
                    if key not in fetched:
                        new_marks.append(
                            {"user_id": user_id, "nudge_id": rec["nudge_id"], "day": day}
                        )
                    deliveries.append(
                        NudgeDelivery(
                            user_id=user_id,
                            nudge_id=rec["nudge_id"],
                            text=rec["text"],
                            day=day,
                            status=status,
                        )
                    )
        if new_marks:
            with self._write_lock, open(self.fetches_path, "a", encoding="utf-8") as fh:
                for mark in new_marks:
                    fh.write(json.dumps(mark, sort_keys=True) + "\n")
        return deliveries

    # -- feedback ------------------------------------------------------------

    def _generated_keys(self) -> set[tuple[str, str]]:
        """(user, nudge) pairs ever generated, across all published days."""
        out = set()
        for day in self.days_published():
            path = self._selections_path(day)
            if not path.exists():
                continue
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        out.add((rec["user_id"], rec["nudge_id"]))
        return out

    def post_feedback(self, events: Iterable[dict]) -> FeedbackResult:
        """Validate and append feedback events.

        Every event must reference a previously generated delivery (ratings
        without opens are fine). Accepted events are queued as interaction
        edges for the next graph update; invalid ones are rejected
        individually with reasons.
        """
        generated = self._generated_keys()
        accepted: list[InteractionEvent] = []
        rejections: list[FeedbackRejection] = []
        for i, obj in enumerate(events):
            try:
                event = event_from_dict(dict(obj))
            except (RecordError, TypeError, ValueError) as exc:
                rejections.append(FeedbackRejection(index=i, reason=str(exc)))
                continue
            if (event.user_id, event.nudge_id) not in generated:
                rejections.append(
                    FeedbackRejection(
                        index=i,
                        reason=(
                            f"no generated delivery of nudge {event.nudge_id!r} "
                            f"for user {event.user_id!r}"
                        ),
                    )
                )
                continue
            accepted.append(event)
        if accepted:
            with self._write_lock, open(self.feedback_path, "a", encoding="utf-8") as fh:
                for event in accepted:
                    fh.write(
                        json.dumps(
                            {
                                "user_id": event.user_id,
                                "nudge_id": event.nudge_id,
                                "event": event.event.value,
                                "day": event.day,
                            },
                            sort_keys=True,
                        )
                        + "\n"
                    )
        return FeedbackResult(
            accepted=len(accepted), rejections=tuple(rejections), events=tuple(accepted)
        )

    def pending_feedback(self) -> list[InteractionEvent]:
        if not self.feedback_path.exists():
            return []
        out = []
        with open(self.feedback_path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    out.append(event_from_dict(json.loads(line)))
        return out

    # -- participant ingestion -------------------------------------------------

    def ingest_participants(self, path, catalog: MarkerCatalog) -> IngestResult:
        """Validate a participant file and stage records for the next cycle.

        Rejects records whose field values fall outside the catalog
        (citing line and field); a duplicated user id within the file keeps
        the later record and flags the earlier line. An unparseable file is
        a hard error.
        """
        path = Path(path)
        rows: list[tuple[int, ParticipantRecord]] = []
        rejections: list[tuple[int, str]] = []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ServingError(f"{path}:{lineno}: unparseable file ({exc})") from exc
                try:
                    record = participant_from_dict(obj)
                except RecordError as exc:
                    rejections.append((lineno, str(exc)))
                    continue
                try:
                    catalog.markers_for(record.fields)
                except CatalogGapError as exc:
                    rejections.append((lineno, str(exc)))
                    continue
                rows.append((lineno, record))

        latest: dict[str, tuple[int, ParticipantRecord]] = {}
        for lineno, record in rows:
            if record.user_id in latest:
                prev_line, _ = latest[record.user_id]
                rejections.append(
                    (prev_line, f"superseded by later record for user {record.user_id!r}")
                )
            latest[record.user_id] = (lineno, record)
        kept = [rec for _, rec in sorted(latest.values())]

        with self._write_lock, open(
            self.staged_participants_path, "a", encoding="utf-8"
        ) as fh:
            for record in kept:
                fh.write(
                    json.dumps(
                        {"user_id": record.user_id, "fields": record.fields}, sort_keys=True
                    )
                    + "\n"
                )
        return IngestResult(
            accepted=len(kept),
            records=tuple(kept),
            rejections=tuple(sorted(rejections)),
        )

    def staged_participants(self) -> list[ParticipantRecord]:
        if not self.staged_participants_path.exists():
            return []
        out = []
        with open(self.staged_participants_path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    out.append(participant_from_dict(json.loads(line)))
        return out

    # -- health -----------------------------------------------------------------

    def health(self) -> dict:
        days = self.days_published()
        last_day = days[-1] if days else None
        telemetry = self._manifest(last_day)["telemetry"] if last_day is not None else {}
        n_feedback = 0
        if self.feedback_path.exists():
            with open(self.feedback_path, "r", encoding="utf-8") as fh:
                n_feedback = sum(1 for line in fh if line.strip())
        return {
            "status": "ok",
            "last_run_day": last_day,
            "runs_published": len(days),
            "feedback_events": n_feedback,
            "telemetry": telemetry,
        }


def schema_field_names() -> dict[str, list[str]]:
    """Record field names per serving schema (for the PII-absence check)."""
    out: dict[str, list[str]] = {
        "NudgeDelivery": [f.name for f in dataclass_fields(NudgeDelivery)],
        "FeedbackEvent": ["user_id", "nudge_id", "event", "day"],
        "ParticipantRecord": [f.name for f in dataclass_fields(ParticipantRecord)],
    }
    return out


try:  # the HTTP layer is optional at import time
    from pydantic import BaseModel as _BaseModel

    class FeedbackEventBody(_BaseModel):
        user_id: str
        nudge_id: str
        event: str
        day: int

    class FeedbackBody(_BaseModel):
        events: "list[FeedbackEventBody]"

except ImportError:  # pragma: no cover
    FeedbackEventBody = FeedbackBody = None


def create_app(store: ServingStore):
    """FastAPI app exposing fetch, feedback and health endpoints."""
    from fastapi import FastAPI, HTTPException

    app = FastAPI(title="nudgekit", version="0.1.0")

    @app.get("/nudges/{user_id}")
    def fetch_nudges(user_id: str, day: int):
        try:
            deliveries = store.get_nudges(user_id, day)
        except RunUnavailableError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except UnknownUserError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return {
            "user_id": user_id,
            "day": day,
            "nudges": [
                {
                    "nudge_id": d.nudge_id,
                    "text": d.text,
                    "rank": i + 1,
                    "status": d.status,
                }
                for i, d in enumerate(deliveries)
            ],
        }

    @app.post("/feedback")
    def submit_feedback(body: FeedbackBody):
        result = store.post_feedback([e.model_dump() for e in body.events])
        return {
            "accepted": result.accepted,
            "rejected": [
                {"index": r.index, "reason": r.reason} for r in result.rejections
            ],
        }

    @app.get("/health")
    def health():
        return store.health()

    return app
