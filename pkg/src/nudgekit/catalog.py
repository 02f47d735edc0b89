"""Marker catalog and segment definitions.

The catalog is declarative data, not code: each raw participant field is
bucketed into exactly one binary marker by a range rule (ordered numeric
buckets) or a category rule (value -> marker mapping). Markers group into
topics. Segments are named conjunctions of required markers; membership is
recomputed whenever a user's markers change. Adding a new use case (say,
HbA1c buckets) is a config edit, not a code change.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import yaml


class CatalogError(Exception):
    pass


class CatalogGapError(CatalogError):
    """A present field value falls outside every bucket of its rule."""

    def __init__(self, field_name: str, value: object):
        self.field_name = field_name
        self.value = value
        super().__init__(f"no marker bucket covers field {field_name!r} value {value!r}")


@dataclass(frozen=True, slots=True)
class Bucket:
    """Half-open value range [lower, upper) mapped to one marker label."""

    label: str
    lower: float = -math.inf
    upper: float = math.inf

    def contains(self, value: float) -> bool:
        return self.lower <= value < self.upper


@dataclass(frozen=True, slots=True)
class MarkerRule:
    """Binarization rule for one raw field.

    Exactly one of `buckets` (numeric range rule) or `categories`
    (string value -> marker label) is populated. Range buckets must tile
    a contiguous interval so any covered value maps to exactly one marker.
    """

    field_name: str
    topic: str
    buckets: tuple[Bucket, ...] = ()
    categories: tuple[tuple[str, str], ...] = ()  # (raw value, marker label)

    def __post_init__(self) -> None:
        if bool(self.buckets) == bool(self.categories):
            raise CatalogError(
                f"rule for field {self.field_name!r} must define buckets xor categories"
            )
        for prev, cur in zip(self.buckets, self.buckets[1:]):
            if prev.upper != cur.lower:
                raise CatalogError(
                    f"buckets for field {self.field_name!r} do not tile: "
                    f"{prev.label!r} ends at {prev.upper}, {cur.label!r} starts at {cur.lower}"
                )

    def marker_labels(self) -> list[str]:
        if self.buckets:
            return [b.label for b in self.buckets]
        return sorted({label for _, label in self.categories})

    def marker_for(self, value: object) -> str:
        if self.buckets:
            try:
                numeric = float(value)  # type: ignore[arg-type]
            except (TypeError, ValueError):
                raise CatalogGapError(self.field_name, value) from None
            for bucket in self.buckets:
                if bucket.contains(numeric):
                    return bucket.label
            raise CatalogGapError(self.field_name, value)
        for raw, label in self.categories:
            if str(value) == raw:
                return label
        raise CatalogGapError(self.field_name, value)


@dataclass(frozen=True, slots=True)
class SegmentDef:
    """Named user group: membership = user holds every required marker."""

    name: str
    required_markers: frozenset[str]

    def matches(self, user_markers: frozenset[str] | set[str]) -> bool:
        return self.required_markers <= set(user_markers)


@dataclass(frozen=True)
class MarkerCatalog:
    """All marker rules plus segment definitions, loaded from one config file."""

    rules: tuple[MarkerRule, ...]
    segments: tuple[SegmentDef, ...] = ()
    _by_field: dict[str, MarkerRule] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        by_field: dict[str, MarkerRule] = {}
        for rule in self.rules:
            if rule.field_name in by_field:
                raise CatalogError(f"duplicate rule for field {rule.field_name!r}")
            by_field[rule.field_name] = rule
        names = [s.name for s in self.segments]
        if len(names) != len(set(names)):
            raise CatalogError("duplicate segment names")
        object.__setattr__(self, "_by_field", by_field)

    @property
    def marker_count(self) -> int:
        return len(self.all_markers())

    def rule_for(self, field_name: str) -> MarkerRule | None:
        return self._by_field.get(field_name)

    def all_markers(self) -> list[tuple[str, str]]:
        """All (marker label, topic) pairs the catalog can emit, sorted."""
        out = {label: rule.topic for rule in self.rules for label in rule.marker_labels()}
        return sorted(out.items())

    def markers_for(self, fields: dict[str, object]) -> set[str]:
        """Map raw field values to marker labels.

        Fields with no rule are ignored (they exist for rendering context
        only). A value outside its rule's buckets raises CatalogGapError.
        """
        markers: set[str] = set()
        for name in sorted(fields):
            rule = self._by_field.get(name)
            if rule is not None:
                markers.add(rule.marker_for(fields[name]))
        return markers

    def segments_for(self, user_markers: set[str] | frozenset[str]) -> list[SegmentDef]:
        return [s for s in self.segments if s.matches(user_markers)]


def _bucket_from_dict(item: dict) -> Bucket:
    return Bucket(
        label=str(item["label"]),
        lower=float(item.get("lower", -math.inf)),
        upper=float(item.get("upper", math.inf)),
    )


def catalog_from_dict(data: dict) -> MarkerCatalog:
    rules = []
    for entry in data.get("markers", []):
        buckets = tuple(_bucket_from_dict(b) for b in entry.get("buckets", []))
        categories = tuple(
            (str(raw), str(label)) for raw, label in entry.get("categories", {}).items()
        )
        rules.append(
            MarkerRule(
                field_name=str(entry["field"]),
                topic=str(entry.get("topic", "general")),
                buckets=buckets,
                categories=categories,
            )
        )
    segments = tuple(
        SegmentDef(name=str(entry["name"]), required_markers=frozenset(entry["markers"]))
        for entry in data.get("segments", [])
    )
    return MarkerCatalog(rules=tuple(rules), segments=segments)


def catalog_to_dict(catalog: MarkerCatalog) -> dict:
    markers = []
    for rule in catalog.rules:
        entry: dict = {"field": rule.field_name, "topic": rule.topic}
        if rule.buckets:
            entry["buckets"] = [
                {
                    "label": b.label,
                    **({"lower": b.lower} if b.lower != -math.inf else {}),
                    **({"upper": b.upper} if b.upper != math.inf else {}),
                }
                for b in rule.buckets
            ]
        else:
            entry["categories"] = {raw: label for raw, label in rule.categories}
        markers.append(entry)
    segments = [
        {"name": s.name, "markers": sorted(s.required_markers)} for s in catalog.segments
    ]
    return {"markers": markers, "segments": segments}


def load_catalog(path) -> MarkerCatalog:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    return catalog_from_dict(data)


def save_catalog(catalog: MarkerCatalog, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(catalog_to_dict(catalog), fh, sort_keys=False, allow_unicode=True)
