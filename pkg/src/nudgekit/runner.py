"""Daily batch orchestration: partition users, run batches in parallel,
retry failures, concatenate.

Users are split into `batches` contiguous index ranges of ceil(n / b)
users; each batch independently runs generate -> rank -> filter ->
diversify -> render against the immutable snapshot and model, writing only
its own output slot. A failed batch is retried up to max_retries times
while successful batches' outputs are retained; because all randomness is
derived per user, any retry schedule reproduces the fault-free output
bit for bit.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .candidates import TargetingRule, generate_candidate_set
from .graph import GraphSnapshot
from .model.indexing import build_index
from .model.network import forward, rank_candidates
from .model.params import ModelState
from .pipeline import (
    DeliveryHistory,
    PipelineConfig,
    constraints_filter,
    diversity_sample,
)
from .records import NudgeTemplate
from .rendering import TemplateFieldError, render_template

#: Test hook: predicate on (batch_index, attempt); True -> the batch raises.
FaultInjector = Callable[[int, int], bool]


class PipelineError(Exception):
    def __init__(self, failed_batches: list[int], partial: dict):
        self.failed_batches = failed_batches
        self.partial = partial
        super().__init__(
            f"batches {failed_batches} failed after retries; "
            f"partial results cover {len(partial)} users"
        )


class InjectedFault(RuntimeError):
    pass


@dataclass(frozen=True, slots=True)
class SelectionItem:
    nudge_id: str
    text: str
    rank: int
    diversity_replacement: bool


@dataclass
class RunTelemetry:
    users_processed: int = 0
    candidates_scored: int = 0
    nudges_emitted: int = 0
    batches_retried: int = 0
    render_drops: list[dict] = field(default_factory=list)
    stage_seconds: dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "users_processed": self.users_processed,
            "candidates_scored": self.candidates_scored,
            "nudges_emitted": self.nudges_emitted,
            "batches_retried": self.batches_retried,
            "render_drops": len(self.render_drops),
            "stage_seconds": {k: round(v, 6) for k, v in self.stage_seconds.items()},
        }


@dataclass(frozen=True)
class PipelineInputs:
    snapshot: GraphSnapshot
    model: ModelState
    templates: Sequence[NudgeTemplate]
    rules: Sequence[TargetingRule]
    history: DeliveryHistory
    user_contexts: Mapping[str, Mapping[str, object]]
    today: int


@dataclass(frozen=True)
class RunResult:
    selections: dict[str, tuple[SelectionItem, ...]]  # user id -> ordered items
    telemetry: RunTelemetry
    day: int


def partition_users(n: int, b: int) -> list[tuple[int, int]]:
    """Contiguous [start, end) index ranges: b batches of ceil(n/b) users.

    Batches are pairwise disjoint and cover all n users; trailing batches
    may be smaller or empty when b does not divide n.
    """
    if n <= 0:
        raise ValueError("need at least one user")
    if b < 1:
        raise ValueError("need at least one batch")
    size = -(-n // b)  # ceil
    return [(min(q * size, n), min((q + 1) * size, n)) for q in range(b)]


@dataclass
class _BatchOutput:
    selections: dict[str, tuple[SelectionItem, ...]]
    candidates_scored: int
    render_drops: list[dict]


def _run_batch(
    inputs: PipelineInputs,
    cfg: PipelineConfig,
    user_ids: Sequence[str],
    final_embeddings,
) -> _BatchOutput:
    """Pure per-batch pipeline; touches no shared mutable state."""
    snapshot = inputs.snapshot
    templates_by_id = {t.nudge_id: t for t in inputs.templates}

    candidate_set = generate_candidate_set(snapshot, inputs.rules, user_ids=user_ids)
    candidate_ids = candidate_set.as_id_map()
    ranked = rank_candidates(
        inputs.model, snapshot, candidate_ids, final_embeddings=final_embeddings
    )
    ranked_by_id = {u.local_id: pairs for u, pairs in ranked.per_user.items()}
    filtered = constraints_filter(ranked_by_id, inputs.history, cfg, inputs.today)
    sampled = diversity_sample(
        filtered, candidate_ids, inputs.history, cfg, inputs.today
    )

    out: dict[str, tuple[SelectionItem, ...]] = {}
    drops: list[dict] = []
    scored = 0
    for user_id in user_ids:
        items: list[SelectionItem] = []
        context = inputs.user_contexts.get(user_id, {})
        for rank, outcome in enumerate(sampled.get(user_id, []), start=1):
            template = templates_by_id.get(outcome.nudge_id)
            if template is None:
                drops.append(
                    {"user_id": user_id, "nudge_id": outcome.nudge_id, "reason": "no template"}
                )
                continue
            try:
                text = render_template(template.text, context)
            except TemplateFieldError as exc:
                drops.append(
                    {
                        "user_id": user_id,
                        "nudge_id": outcome.nudge_id,
                        "reason": f"missing field {exc.placeholder!r}",
                    }
                )
                continue
            items.append(
                SelectionItem(
                    nudge_id=outcome.nudge_id,
                    text=text,
                    rank=rank,
                    diversity_replacement=outcome.replaced,
                )
            )
        out[user_id] = tuple(items)
        scored += len(candidate_ids.get(user_id, ()))
    return _BatchOutput(selections=out, candidates_scored=scored, render_drops=drops)


def run_parallel(
    inputs: PipelineInputs,
    cfg: PipelineConfig,
    fault_injector: FaultInjector | None = None,
) -> RunResult:
    """Run the full selection pipeline over all users in parallel batches."""
    t_start = time.perf_counter()
    telemetry = RunTelemetry()

    users = sorted(inputs.user_contexts)
    if not users:
        raise ValueError("no users to process")

    t0 = time.perf_counter()
    index = build_index(inputs.model, inputs.snapshot)
    final_embeddings = forward(inputs.model, index).final
    telemetry.stage_seconds["propagate"] = time.perf_counter() - t0

    ranges = partition_users(len(users), cfg.batches)
    batch_users = [users[lo:hi] for lo, hi in ranges]
    results: dict[int, _BatchOutput] = {}
    pending = list(range(len(batch_users)))

    t0 = time.perf_counter()
    for attempt in range(cfg.max_retries + 1):
        if not pending:
            break
        if attempt > 0:
            telemetry.batches_retried += len(pending)

        def execute(q: int, attempt: int = attempt) -> _BatchOutput:
            if fault_injector is not None and fault_injector(q, attempt):
                raise InjectedFault(f"injected fault in batch {q} attempt {attempt}")
            return _run_batch(inputs, cfg, batch_users[q], final_embeddings)

        still_failing: list[int] = []
        with ThreadPoolExecutor(max_workers=max(1, min(cfg.batches, 8))) as pool:
            futures = {q: pool.submit(execute, q) for q in pending}
            for q, fut in futures.items():
                try:
                    results[q] = fut.result()
                except Exception:
                    still_failing.append(q)
        pending = still_failing
    failed = sorted(pending)
    telemetry.stage_seconds["batches"] = time.perf_counter() - t0

    selections: dict[str, tuple[SelectionItem, ...]] = {}
    for q in sorted(results):
        selections.update(results[q].selections)
        telemetry.candidates_scored += results[q].candidates_scored
        telemetry.render_drops.extend(results[q].render_drops)
    if failed:
        raise PipelineError(failed_batches=failed, partial=selections)

    telemetry.users_processed = len(selections)
    telemetry.nudges_emitted = sum(len(v) for v in selections.values())
    telemetry.stage_seconds["total"] = time.perf_counter() - t_start
    return RunResult(selections=selections, telemetry=telemetry, day=inputs.today)


def write_selections(result: RunResult, path) -> None:
    """One record per (user, nudge): the day's output file."""
    with open(path, "w", encoding="utf-8") as fh:
        for user_id in sorted(result.selections):
            for item in result.selections[user_id]:
                fh.write(
                    json.dumps(
                        {
                            "user_id": user_id,
                            "nudge_id": item.nudge_id,
                            "text": item.text,
                            "rank": item.rank,
                            "diversity_replacement": item.diversity_replacement,
                            "day": result.day,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )


def read_selections(path) -> dict[str, list[dict]]:
    out: dict[str, list[dict]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rec = json.loads(line)
                out.setdefault(rec["user_id"], []).append(rec)
    for items in out.values():
        items.sort(key=lambda r: r["rank"])
    return out


def record_sent(history: DeliveryHistory, result: RunResult) -> None:
    for user_id in sorted(result.selections):
        for item in result.selections[user_id]:
            history.record_sent(user_id, item.nudge_id, result.day)
