import pytest

from nudgekit.catalog import (
    Bucket,
    CatalogError,
    CatalogGapError,
    MarkerCatalog,
    MarkerRule,
    SegmentDef,
    catalog_from_dict,
    catalog_to_dict,
    load_catalog,
    save_catalog,
)


def test_bucket_partition_maps_to_exactly_one_marker(tiny_catalog):
    rule = tiny_catalog.rule_for("weekly_mean_steps")
    for value in (0, 1749, 1750, 2500, 3749, 3750, 9000, 11250, 50000):
        hits = [b.label for b in rule.buckets if b.contains(value)]
        assert len(hits) == 1
        assert rule.marker_for(value) == hits[0]


def test_non_tiling_buckets_rejected():
    with pytest.raises(CatalogError):
        MarkerRule(
            field_name="x",
            topic="t",
            buckets=(Bucket("lo", upper=10), Bucket("hi", lower=20)),
        )


def test_category_rule_and_gap():
    rule = MarkerRule(
        field_name="smoking",
        topic="lifestyle",
        categories=(("never", "smoking: never"), ("current", "smoking: current")),
    )
    assert rule.marker_for("never") == "smoking: never"
    with pytest.raises(CatalogGapError):
        rule.marker_for("sometimes")


def test_bounded_numeric_rule_gap():
    rule = MarkerRule(
        field_name="age",
        topic="demo",
        buckets=(Bucket("age: adult", lower=18, upper=120),),
    )
    with pytest.raises(CatalogGapError) as err:
        rule.marker_for(5)
    assert err.value.field_name == "age"


def test_rule_requires_buckets_xor_categories():
    with pytest.raises(CatalogError):
        MarkerRule(field_name="x", topic="t")


def test_markers_for_skips_unruled_fields(tiny_catalog):
    markers = tiny_catalog.markers_for({"age": 34, "unknown_field": 1.0})
    assert markers == {"age: 30s"}


def test_segment_conjunction(tiny_catalog):
    assert tiny_catalog.segments_for({"age: 30s", "steps: 2.5k", "BMI: normal"}) == [
        s for s in tiny_catalog.segments if s.name == "Inactive Young Adults"
    ]
    assert tiny_catalog.segments_for({"age: 30s"}) == []


def test_duplicate_field_rule_rejected():
    rule = MarkerRule(
        field_name="x", topic="t", buckets=(Bucket("x: any"),)
    )
    with pytest.raises(CatalogError):
        MarkerCatalog(rules=(rule, rule))


def test_yaml_round_trip(tmp_path, tiny_catalog):
    path = tmp_path / "catalog.yaml"
    save_catalog(tiny_catalog, path)
    loaded = load_catalog(path)
    assert loaded.all_markers() == tiny_catalog.all_markers()
    assert {s.name for s in loaded.segments} == {s.name for s in tiny_catalog.segments}
    assert loaded.markers_for({"age": 34, "weekly_mean_steps": 2500}) == {
        "age: 30s",
        "steps: 2.5k",
    }


def test_dict_round_trip(tiny_catalog):
    rebuilt = catalog_from_dict(catalog_to_dict(tiny_catalog))
    assert rebuilt.all_markers() == tiny_catalog.all_markers()


def test_segments_require_unique_names():
    seg = SegmentDef(name="dup", required_markers=frozenset({"m"}))
    with pytest.raises(CatalogError):
        MarkerCatalog(rules=(), segments=(seg, seg))
