"""Deterministic synthetic populations for desk-scale runs.

Generated users carry catalog-consistent raw fields (plus derived coarse
fields like life stage and activity level that segments are defined
over), nudges get goals and target segments, and interactions are sampled
with a planted preference structure: users open nudges aligned with their
segment (and goal taste) at a boosted rate, giving the recommender a
learnable signal with tunable strength. Everything is a pure function of
the seed; per-user streams are derived so generation order is irrelevant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .catalog import Bucket, CatalogError, MarkerCatalog, MarkerRule, SegmentDef
from .entities import Relation
from .records import InteractionEvent, NudgeTemplate, ParticipantRecord

LIFE_STAGES = (
    ("young adult", "Young Adults"),
    ("adult", "Adults"),
    ("senior", "Seniors"),
)
ACTIVITY_LEVELS = (
    ("low", "Inactive"),
    ("moderate", "Moderately Active"),
    ("high", "Active"),
)

GOAL_STEPS = "steps"
GOAL_MVPA = "mvpa"

#: Authored goal mix used at full library size: 31 step nudges per 96 total.
STEPS_SHARE = 31 / 96


def _range_rule(field_name, topic, prefix, edges, labels) -> MarkerRule:
    buckets = []
    lower = -math.inf
    for label, upper in zip(labels, list(edges) + [math.inf]):
        buckets.append(Bucket(label=f"{prefix}: {label}", lower=lower, upper=upper))
        lower = upper
    return MarkerRule(field_name=field_name, topic=topic, buckets=tuple(buckets))


def _category_rule(field_name, topic, prefix, values) -> MarkerRule:
    return MarkerRule(
        field_name=field_name,
        topic=topic,
        categories=tuple((v, f"{prefix}: {v}") for v in values),
    )


def default_segments() -> tuple[SegmentDef, ...]:
    """Life stage x activity level grid, e.g. "Inactive Young Adults"."""
    segments = []
    for stage, stage_title in LIFE_STAGES:
        for level, level_title in ACTIVITY_LEVELS:
            segments.append(
                SegmentDef(
                    name=f"{level_title} {stage_title}",
                    required_markers=frozenset(
                        {f"life stage: {stage}", f"activity: {level}"}
                    ),
                )
            )
    return tuple(segments)


def base_marker_rules() -> list[MarkerRule]:
    rules = [
        _range_rule(
            "age",
            "demographics",
            "age",
            [20, 30, 40, 50, 60, 70, 80],
            ["<20", "20s", "30s", "40s", "50s", "60s", "70s", "80+"],
        ),
        _category_rule(
            "life_stage", "demographics", "life stage", [s for s, _ in LIFE_STAGES]
        ),
        _range_rule(
            "bmi",
            "anthropometrics",
            "BMI",
            [18.5, 25, 30],
            ["underweight", "normal", "overweight", "obese"],
        ),
        _range_rule(
            "height_cm",
            "anthropometrics",
            "height",
            [155, 165, 175, 185],
            ["<155cm", "155-165cm", "165-175cm", "175-185cm", "185cm+"],
        ),
        _category_rule(
            "weight_trend", "anthropometrics", "weight trend", ["down", "stable", "up"]
        ),
        _range_rule(
            "weekly_mean_steps",
            "activity",
            "steps",
            [750, 1750, 3750, 6250, 8750, 11250, 13750],
            ["0.5k", "1k", "2.5k", "5k", "7.5k", "10k", "12.5k", "15k+"],
        ),
        _range_rule(
            "weekly_mvpa",
            "activity",
            "MVPA",
            [15, 30, 75, 150, 300],
            ["none", "<30min", "30-75min", "75-150min", "150-300min", "300min+"],
        ),
        _category_rule(
            "activity_level", "activity", "activity", [a for a, _ in ACTIVITY_LEVELS]
        ),
        _range_rule(
            "active_days",
            "activity",
            "active days",
            [1, 2, 3, 4, 5, 6, 7],
            ["0", "1", "2", "3", "4", "5", "6", "7"],
        ),
        _range_rule(
            "floors_climbed",
            "activity",
            "floors",
            [5, 15, 30, 60],
            ["<5", "5-15", "15-30", "30-60", "60+"],
        ),
        _range_rule(
            "sleep_hours",
            "sleep",
            "sleep",
            [5, 6, 7, 8, 9],
            ["<5h", "5-6h", "6-7h", "7-8h", "8-9h", "9h+"],
        ),
        _range_rule(
            "sleep_regularity",
            "sleep",
            "sleep regularity",
            [40, 60, 80],
            ["poor", "fair", "good", "excellent"],
        ),
        _range_rule(
            "resting_heart_rate",
            "vitals",
            "resting HR",
            [55, 62, 70, 78, 86],
            ["<55", "55-62", "62-70", "70-78", "78-86", "86+"],
        ),
        _range_rule(
            "systolic_bp",
            "vitals",
            "systolic BP",
            [110, 120, 130, 140],
            ["<110", "110-120", "120-130", "130-140", "140+"],
        ),
        _range_rule(
            "diastolic_bp",
            "vitals",
            "diastolic BP",
            [70, 80, 90],
            ["<70", "70-80", "80-90", "90+"],
        ),
        _range_rule(
            "blood_glucose",
            "vitals",
            "glucose",
            [4.5, 5.5, 6.5, 7.8],
            ["<4.5", "4.5-5.5", "5.5-6.5", "6.5-7.8", "7.8+"],
        ),
        _range_rule(
            "hba1c",
            "vitals",
            "HbA1c",
            [5.7, 6.5, 8.0],
            ["normal", "prediabetic", "diabetic", "high"],
        ),
        _range_rule(
            "spo2", "vitals", "SpO2", [94, 97], ["<94", "94-97", "97+"]
        ),
        _range_rule(
            "cholesterol",
            "vitals",
            "cholesterol",
            [4.0, 5.0, 6.2, 7.5],
            ["<4.0", "4.0-5.0", "5.0-6.2", "6.2-7.5", "7.5+"],
        ),
        _range_rule(
            "fruit_servings",
            "nutrition",
            "fruit",
            [1, 2, 3, 4],
            ["0", "1", "2", "3", "4+"],
        ),
        _range_rule(
            "veg_servings",
            "nutrition",
            "vegetables",
            [1, 2, 3, 4],
            ["0", "1", "2", "3", "4+"],
        ),
        _range_rule(
            "water_liters",
            "nutrition",
            "water",
            [1.0, 2.0, 3.0],
            ["<1L", "1-2L", "2-3L", "3L+"],
        ),
        _range_rule(
            "sugary_drinks",
            "nutrition",
            "sugary drinks",
            [1, 3, 7],
            ["0", "1-3", "3-7", "7+"],
        ),
        _range_rule(
            "screen_time_hours",
            "lifestyle",
            "screen time",
            [2, 4, 6, 9],
            ["<2h", "2-4h", "4-6h", "6-9h", "9h+"],
        ),
        _range_rule(
            "stress_score",
            "lifestyle",
            "stress",
            [20, 40, 60, 80],
            ["very low", "low", "moderate", "high", "very high"],
        ),
        _range_rule(
            "mindfulness_minutes",
            "lifestyle",
            "mindfulness",
            [5, 20, 60],
            ["none", "<20min", "20-60min", "60min+"],
        ),
        _category_rule(
            "smoking_status", "lifestyle", "smoking", ["never", "former", "current"]
        ),
        _range_rule(
            "step_goal_progress",
            "activity",
            "step goal",
            [25, 50, 75, 100],
            ["<25%", "25-50%", "50-75%", "75-100%", "100%+"],
        ),
    ]
    return rules


def build_catalog(
    min_markers: int = 131, segments: tuple[SegmentDef, ...] | None = None
) -> MarkerCatalog:
    """Default catalog, padded with generic wellness indices if needed."""
    rules = base_marker_rules()
    count = sum(len(r.marker_labels()) for r in rules)
    idx = 0
    while count < min_markers:
        rules.append(
            _range_rule(
                f"wellness_index_{idx}",
                "wellness",
                f"wellness {idx}",
                [20, 40, 60, 80],
                ["very low", "low", "medium", "high", "very high"],
            )
        )
        count += 5
        idx += 1
    return MarkerCatalog(
        rules=tuple(rules), segments=segments if segments is not None else default_segments()
    )


def slim_catalog() -> MarkerCatalog:
    """Minimal catalog for benchmark volumes: few markers, same segments."""
    rules = [
        _category_rule(
            "life_stage", "demographics", "life stage", [s for s, _ in LIFE_STAGES]
        ),
        _category_rule(
            "activity_level", "activity", "activity", [a for a, _ in ACTIVITY_LEVELS]
        ),
        _range_rule(
            "weekly_mean_steps",
            "activity",
            "steps",
            [750, 1750, 3750, 6250, 8750, 11250, 13750],
            ["0.5k", "1k", "2.5k", "5k", "7.5k", "10k", "12.5k", "15k+"],
        ),
    ]
    return MarkerCatalog(rules=tuple(rules), segments=default_segments())


@dataclass(frozen=True)
class PopulationSpec:
    n_users: int = 1000
    n_nudges: int = 96
    seed: int = 0
    interaction_density: float = 0.08
    affinity_strength: float = 4.0
    universal_fraction: float = 0.34
    n_days: int = 14
    min_markers: int = 131
    segments: tuple[SegmentDef, ...] | None = None
    slim: bool = False  # benchmark mode: slim catalog, all nudges universal

    def __post_init__(self) -> None:
        if self.n_users < 1 or self.n_nudges < 1:
            raise ValueError("n_users and n_nudges must be >= 1")
        if not 0.0 <= self.interaction_density <= 1.0:
            raise ValueError("interaction_density must be in [0, 1]")
        if self.segments is not None:
            conjunctions = [s.required_markers for s in self.segments]
            if len(conjunctions) != len(set(conjunctions)):
                raise CatalogError(
                    "more segments than distinct marker combinations "
                    "(duplicate segment conjunctions)"
                )


@dataclass(frozen=True)
class SyntheticPopulation:
    spec: PopulationSpec
    catalog: MarkerCatalog
    participants: tuple[ParticipantRecord, ...]
    templates: tuple[NudgeTemplate, ...]
    events: tuple[InteractionEvent, ...]

    @property
    def user_contexts(self) -> dict[str, dict[str, object]]:
        return {p.user_id: dict(p.fields) for p in self.participants}


_STEP_TEXTS = (
    "Nice work! You averaged {{avg_daily_steps}} daily steps last week. "
    "A short stroll today keeps the streak alive.",
    "You logged {{weekly_mean_steps}} steps a day on average. "
    "Can you add ten minutes of walking today?",
    "Your step count is trending at {{avg_daily_steps}} per day. "
    "Try taking the stairs this afternoon.",
    "Walking buddy check-in: {{avg_daily_steps}} daily steps so far. "
    "A lunchtime loop would top it up nicely.",
)

_MVPA_TEXTS = (
    "You clocked {{weekly_mvpa}} active minutes last week. "
    "A brisk 15-minute session today would build on that.",
    "Great effort with {{weekly_mvpa}} exercise minutes! "
    "A quick workout keeps the momentum going.",
    "Your heart thanks you for {{weekly_mvpa}} active minutes. "
    "How about a short cycle or swim today?",
    "{{active_days}} active days and {{weekly_mvpa}} exercise minutes logged. "
    "One more session this week beats your average.",
)


def _life_stage(age: int) -> str:
    if age < 40:
        return "young adult"
    if age < 60:
        return "adult"
    return "senior"


def _activity_level(steps: int, mvpa: int) -> str:
    if steps >= 10000 or mvpa >= 150:
        return "high"
    if steps < 5000 and mvpa < 75:
        return "low"
    return "moderate"


def _participant(uid: str, rng: np.random.Generator, catalog: MarkerCatalog) -> ParticipantRecord:
    age = int(rng.integers(18, 86))
    steps = int(np.clip(rng.gamma(2.2, 2600), 0, 24000))
    mvpa = int(np.clip(rng.gamma(1.4, 45), 0, 580))
    fields: dict[str, object] = {
        "age": age,
        "life_stage": _life_stage(age),
        "bmi": round(float(np.clip(rng.normal(24.5, 4.0), 15.0, 42.0)), 1),
        "height_cm": round(float(np.clip(rng.normal(168, 9), 145, 200)), 1),
        "weight_trend": ["down", "stable", "up"][int(rng.integers(0, 3))],
        "weekly_mean_steps": steps,
        "avg_daily_steps": steps,
        "weekly_mvpa": mvpa,
        "activity_level": _activity_level(steps, mvpa),
        "active_days": int(rng.integers(0, 8)),
        "floors_climbed": int(np.clip(rng.gamma(1.5, 12), 0, 120)),
        "sleep_hours": round(float(np.clip(rng.normal(6.9, 1.1), 3.5, 11.0)), 1),
        "sleep_regularity": int(rng.integers(0, 101)),
        "resting_heart_rate": int(np.clip(rng.normal(68, 9), 42, 110)),
        "systolic_bp": int(np.clip(rng.normal(122, 13), 90, 180)),
        "diastolic_bp": int(np.clip(rng.normal(78, 9), 55, 115)),
        "blood_glucose": round(float(np.clip(rng.normal(5.6, 1.0), 3.5, 12.0)), 1),
        "hba1c": round(float(np.clip(rng.normal(5.8, 0.8), 4.2, 11.0)), 1),
        "spo2": int(np.clip(rng.normal(97, 1.4), 88, 100)),
        "cholesterol": round(float(np.clip(rng.normal(5.1, 0.9), 2.8, 9.5)), 1),
        "fruit_servings": int(np.clip(rng.poisson(1.8), 0, 9)),
        "veg_servings": int(np.clip(rng.poisson(2.1), 0, 9)),
        "water_liters": round(float(np.clip(rng.normal(1.9, 0.7), 0.2, 5.0)), 1),
        "sugary_drinks": int(np.clip(rng.poisson(2.0), 0, 14)),
        "screen_time_hours": round(float(np.clip(rng.normal(4.6, 2.0), 0.0, 15.0)), 1),
        "stress_score": int(rng.integers(0, 101)),
        "mindfulness_minutes": int(np.clip(rng.gamma(1.2, 15), 0, 180)),
        "smoking_status": ["never", "former", "current"][
            int(rng.choice(3, p=[0.7, 0.2, 0.1]))
        ],
        "step_goal_progress": int(np.clip(steps / 10000 * 100, 0, 160)),
    }
    for rule in catalog.rules:
        if rule.field_name.startswith("wellness_index_"):
            fields[rule.field_name] = int(rng.integers(0, 101))
    return ParticipantRecord(user_id=uid, fields=fields)


def _slim_participant(uid: str, rng: np.random.Generator) -> ParticipantRecord:
    age = int(rng.integers(18, 86))
    steps = int(np.clip(rng.gamma(2.2, 2600), 0, 24000))
    mvpa = int(np.clip(rng.gamma(1.4, 45), 0, 580))
    return ParticipantRecord(
        user_id=uid,
        fields={
            "life_stage": _life_stage(age),
            "activity_level": _activity_level(steps, mvpa),
            "weekly_mean_steps": steps,
            "avg_daily_steps": steps,
            "weekly_mvpa": mvpa,
            "active_days": int(rng.integers(0, 8)),
        },
    )


def _make_templates(spec: PopulationSpec, rng: np.random.Generator, catalog: MarkerCatalog):
    n_steps = max(1, round(spec.n_nudges * STEPS_SHARE)) if spec.n_nudges > 1 else 1
    segment_names = [s.name for s in catalog.segments]
    templates: list[NudgeTemplate] = []
    width = max(3, len(str(spec.n_nudges)))
    for i in range(spec.n_nudges):
        goal = GOAL_STEPS if i < n_steps else GOAL_MVPA
        pool = _STEP_TEXTS if goal == GOAL_STEPS else _MVPA_TEXTS
        text = pool[i % len(pool)]
        if spec.slim or rng.random() < spec.universal_fraction or not segment_names:
            targets: tuple[str, ...] = ()
        else:
            n_targets = 1 + int(rng.random() < 0.25)
            picks = rng.choice(len(segment_names), size=n_targets, replace=False)
            targets = tuple(sorted(segment_names[j] for j in picks))
        templates.append(
            NudgeTemplate(
                nudge_id=f"n{i:0{width}d}",
                goal=goal,
                text=text,
                target_segments=targets,
            )
        )
    return templates


def _candidate_templates(
    person: ParticipantRecord, templates, catalog: MarkerCatalog
) -> list[tuple[NudgeTemplate, bool]]:
    """(template, segment-aligned) for each nudge eligible for this user."""
    markers = catalog.markers_for(person.fields)
    segment_names = {s.name for s in catalog.segments_for(markers)}
    out = []
    for t in templates:
        if t.required_markers and not set(t.required_markers) <= markers:
            continue
        if t.target_segments:
            if set(t.target_segments) & segment_names:
                out.append((t, True))
        else:
            out.append((t, False))
    return out


def generate_population(spec: PopulationSpec) -> SyntheticPopulation:
    """Deterministic population, library and interaction log for a PopulationSpec."""
    if spec.slim:
        catalog = slim_catalog()
    else:
        catalog = build_catalog(min_markers=spec.min_markers, segments=spec.segments)

    lib_rng = np.random.default_rng([spec.seed, 1])
    templates = _make_templates(spec, lib_rng, catalog)

    width = max(4, len(str(spec.n_users)))
    participants: list[ParticipantRecord] = []
    events: list[InteractionEvent] = []
    for i in range(spec.n_users):
        uid = f"u{i:0{width}d}"
        rng = np.random.default_rng([spec.seed, 2, i])
        person = (
            _slim_participant(uid, rng) if spec.slim else _participant(uid, rng, catalog)
        )
        participants.append(person)
        if spec.interaction_density == 0.0:
            continue
        prefers_steps = person.fields["activity_level"] == "low"
        for template, aligned in _candidate_templates(person, templates, catalog):
            boost = 1.0
            if aligned:
                boost += spec.affinity_strength
            if (template.goal == GOAL_STEPS) == prefers_steps:
                boost += spec.affinity_strength / 2.0
            p_open = min(0.95, spec.interaction_density * boost)
            if rng.random() >= p_open:
                continue
            day = int(rng.integers(0, spec.n_days))
            events.append(
                InteractionEvent(
                    user_id=uid, nudge_id=template.nudge_id, event=Relation.OPENED, day=day
                )
            )
            if aligned and rng.random() < 0.3:
                events.append(
                    InteractionEvent(
                        user_id=uid,
                        nudge_id=template.nudge_id,
                        event=Relation.RATED_USEFUL,
                        day=day,
                    )
                )
            elif not aligned and rng.random() < 0.12:
                events.append(
                    InteractionEvent(
                        user_id=uid,
                        nudge_id=template.nudge_id,
                        event=Relation.RATED_NOT_USEFUL,
                        day=day,
                    )
                )

    return SyntheticPopulation(
        spec=spec,
        catalog=catalog,
        participants=tuple(participants),
        templates=tuple(templates),
        events=tuple(events),
    )


def small_population(seed: int = 0, **overrides) -> SyntheticPopulation:
    """The 1k-user desk-scale preset."""
    params = {"n_users": 1000, "n_nudges": 96, "seed": seed}
    params.update(overrides)
    return generate_population(PopulationSpec(**params))


def bench_population(pair_count: int, seed: int = 0, n_nudges: int = 50) -> SyntheticPopulation:
    """A population sized so candidate pairs ~= pair_count.

    All nudges are universal candidates, so pairs = users * nudges exactly.
    """
    n_users = max(1, -(-pair_count // n_nudges))
    spec = PopulationSpec(
        n_users=n_users,
        n_nudges=n_nudges,
        seed=seed,
        interaction_density=0.0,
        slim=True,
    )
    return generate_population(spec)
