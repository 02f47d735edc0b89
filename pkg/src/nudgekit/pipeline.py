"""Business-rule filtering, diversity sampling, delivery history.

The constraints filter enforces the user-experience guarantees: nudges the
user negatively rated within the lookback window and nudges sent recently
are removed, then the per-day budget truncates the survivors. Diversity
sampling then replaces each surviving slot independently with probability
p_diversity by a uniform draw from the user's remaining candidate pool.

All randomness is derived per user from the global seed, so results do not
depend on batch composition or retry schedules.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import yaml

from .model.network import ScoredPair

RATING_USEFUL = "useful"
RATING_NOT_USEFUL = "not_useful"


class PipelineConfigError(Exception):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    batches: int = 8
    k_daily: int | None = 1  # None = unlimited
    p_diversity: float = 0.3
    d_neg_filter: int = 7
    d_recent: int = 7
    seed: int = 0
    max_retries: int = 3
    diversity_respects_recency: bool = True

    def __post_init__(self) -> None:
        if self.batches < 1:
            raise PipelineConfigError("batches must be >= 1")
        if self.k_daily is not None and self.k_daily < 0:
            raise PipelineConfigError("k_daily must be >= 0 (or None for unlimited)")
        if not 0.0 <= self.p_diversity <= 1.0:
            raise PipelineConfigError("p_diversity must be in [0, 1]")
        if self.d_neg_filter < 0 or self.d_recent < 0:
            raise PipelineConfigError("lookback windows must be >= 0")
        if self.max_retries < 0:
            raise PipelineConfigError("max_retries must be >= 0")

    def override(self, **kwargs) -> "PipelineConfig":
        supplied = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **supplied)


def load_pipeline_config(path) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    pipeline = data.get("pipeline", data)
    known = {
        "batches",
        "k_daily",
        "p_diversity",
        "d_neg_filter",
        "d_recent",
        "seed",
        "max_retries",
        "diversity_respects_recency",
    }
    unknown = set(pipeline) - known
    if unknown:
        raise PipelineConfigError(f"unknown pipeline config keys: {sorted(unknown)}")
    return PipelineConfig(**pipeline)


@dataclass(frozen=True, slots=True)
class DeliveryRecord:
    user_id: str
    nudge_id: str
    day: int  # day sent
    opened: bool = False
    rating: str | None = None  # "useful" | "not_useful" | None
    rating_day: int | None = None


@dataclass
class DeliveryHistory:
    """Per-user log of sent nudges, opens and ratings."""

    records: list[DeliveryRecord] = field(default_factory=list)
    _by_user: dict[str, list[int]] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self._by_user = {}
        for i, rec in enumerate(self.records):
            self._by_user.setdefault(rec.user_id, []).append(i)

    def add(self, record: DeliveryRecord) -> None:
        self.records.append(record)
        self._by_user.setdefault(record.user_id, []).append(len(self.records) - 1)

    def record_sent(self, user_id: str, nudge_id: str, day: int) -> None:
        self.add(DeliveryRecord(user_id=user_id, nudge_id=nudge_id, day=day))

    def apply_feedback(
        self, user_id: str, nudge_id: str, event: str, day: int
    ) -> bool:
        """Attach an open/rating to the latest matching delivery.

        Returns False when no delivery of that nudge exists for the user.
        """
        indices = self._by_user.get(user_id, ())
        target = None
        for i in indices:
            rec = self.records[i]
            if rec.nudge_id == nudge_id and rec.day <= day:
                if target is None or rec.day > self.records[target].day:
                    target = i
        if target is None:
            return False
        rec = self.records[target]
        if event == "opened":
            rec = replace(rec, opened=True)
        elif event == "rated_useful":
            rec = replace(rec, opened=rec.opened, rating=RATING_USEFUL, rating_day=day)
        elif event == "rated_not_useful":
            rec = replace(rec, rating=RATING_NOT_USEFUL, rating_day=day)
        elif event == "sent":
            pass
        else:
            return False
        self.records[target] = rec
        return True

    def _user_records(self, user_id: str) -> Iterable[DeliveryRecord]:
        return (self.records[i] for i in self._by_user.get(user_id, ()))

    def negatively_rated(self, user_id: str, today: int, lookback: int) -> set[str]:
        """Nudges rated not-useful strictly within `lookback` days of today."""
        out = set()
        for rec in self._user_records(user_id):
            if rec.rating == RATING_NOT_USEFUL:
                when = rec.rating_day if rec.rating_day is not None else rec.day
                if 0 <= today - when < lookback:
                    out.add(rec.nudge_id)
        return out

    def recently_sent(self, user_id: str, today: int, lookback: int) -> set[str]:
        return {
            rec.nudge_id
            for rec in self._user_records(user_id)
            if 0 <= today - rec.day < lookback
        }

    def blocked(self, user_id: str, today: int, cfg: PipelineConfig) -> set[str]:
        blocked = self.negatively_rated(user_id, today, cfg.d_neg_filter)
        if cfg.diversity_respects_recency:
            blocked |= self.recently_sent(user_id, today, cfg.d_recent)
        return blocked


def save_history(history: DeliveryHistory, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in history.records:
            fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")


def load_history(path) -> DeliveryHistory:
    path = Path(path)
    if not path.exists():
        return DeliveryHistory()
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(DeliveryRecord(**json.loads(line)))
    return DeliveryHistory(records=records)


def constraints_filter(
    ranked: Mapping[str, Sequence[ScoredPair]],
    history: DeliveryHistory,
    cfg: PipelineConfig,
    today: int,
) -> dict[str, list[ScoredPair]]:
    """Apply negative-rating and recency exclusions, then the daily budget.

    Order is preserved; output length is min(k_daily, survivors). With
    zero lookbacks and k_daily=None the filter is the identity.
    """
    out: dict[str, list[ScoredPair]] = {}
    for user_id, pairs in ranked.items():
        negative = history.negatively_rated(user_id, today, cfg.d_neg_filter)
        recent = history.recently_sent(user_id, today, cfg.d_recent)
        survivors = [
            p
            for p in pairs
            if p.nudge.local_id not in negative and p.nudge.local_id not in recent
        ]
        if cfg.k_daily is not None:
            survivors = survivors[: cfg.k_daily]
        out[user_id] = survivors
    return out


def user_rng(seed: int, user_id: str) -> np.random.Generator:
    """Deterministic per-user stream independent of batch shape and retries."""
    digest = hashlib.blake2b(user_id.encode("utf-8"), digest_size=16).digest()
    words = [int.from_bytes(digest[i : i + 8], "little") for i in (0, 8)]
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, *words])


@dataclass(frozen=True, slots=True)
class DiversityOutcome:
    nudge_id: str
    replaced: bool


def diversity_sample(
    filtered: Mapping[str, Sequence[ScoredPair]],
    candidates: Mapping[str, Sequence[str]],
    history: DeliveryHistory,
    cfg: PipelineConfig,
    today: int,
) -> dict[str, list[DiversityOutcome]]:
    """Replace each selected slot with probability p_diversity.

    Replacements draw uniformly without replacement from the user's
    candidate list minus already-selected nudges minus nudges blocked by
    the business rules; an empty pool keeps the original nudge. Output
    lists keep their input lengths and order.
    """
    out: dict[str, list[DiversityOutcome]] = {}
    for user_id in filtered:
        pairs = filtered[user_id]
        rng = user_rng(cfg.seed, user_id)
        blocked = history.blocked(user_id, today, cfg) if cfg.p_diversity > 0 else set()
        current = [p.nudge.local_id for p in pairs]
        selected = set(current)
        outcomes: list[DiversityOutcome] = []
        for slot, nudge_id in enumerate(current):
            replaced = False
            if cfg.p_diversity > 0 and rng.random() < cfg.p_diversity:
                pool = [
                    c
                    for c in candidates.get(user_id, ())
                    if c not in selected and c not in blocked
                ]
                if pool:
                    pick = pool[int(rng.integers(0, len(pool)))]
                    selected.discard(nudge_id)
                    selected.add(pick)
                    current[slot] = pick
                    nudge_id = pick
                    replaced = True
            outcomes.append(DiversityOutcome(nudge_id=nudge_id, replaced=replaced))
        out[user_id] = outcomes
    return out
