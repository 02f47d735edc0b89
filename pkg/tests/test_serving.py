import json

import pytest

from nudgekit.candidates import rules_from_library
from nudgekit.entities import user, nudge
from nudgekit.graph import construct_graph, triplet_diff
from nudgekit.model import HyperParams, init_embeddings
from nudgekit.pipeline import DeliveryHistory, PipelineConfig
from nudgekit.runner import PipelineInputs, run_parallel
from nudgekit.serving import (
    PII_FIELD_NAMES,
    RunUnavailableError,
    ServingStore,
    UnknownUserError,
    create_app,
    schema_field_names,
)
from nudgekit.synth import PopulationSpec, generate_population


@pytest.fixture(scope="module")
def published_world(tmp_path_factory):
    population = generate_population(
        PopulationSpec(n_users=30, n_nudges=10, seed=13, interaction_density=0.1)
    )
    snapshot = construct_graph(
        population.templates, population.participants, population.events, population.catalog
    ).snapshot
    state = init_embeddings(
        snapshot, HyperParams(entity_dim=8, relation_dim=8, layer_dims=(8,), seed=1)
    )
    inputs = PipelineInputs(
        snapshot=snapshot,
        model=state,
        templates=population.templates,
        rules=rules_from_library(population.templates),
        history=DeliveryHistory(),
        user_contexts=population.user_contexts,
        today=snapshot.time + 1,
    )
    cfg = PipelineConfig(batches=3, k_daily=1, p_diversity=0.2, seed=4)
    result = run_parallel(inputs, cfg)
    store = ServingStore(tmp_path_factory.mktemp("serving"))
    store.publish_run(result)
    return population, snapshot, result, store


class TestGetNudges:
    def test_budget_visibility(self, published_world):
        population, snapshot, result, store = published_world
        day = result.day
        for person in population.participants:
            deliveries = store.get_nudges(person.user_id, day)
            assert len(deliveries) <= 1  # k_daily = 1

    def test_exactly_one_delivery_for_selected_user(self, published_world):
        population, snapshot, result, store = published_world
        uid = next(u for u, items in sorted(result.selections.items()) if items)
        deliveries = store.get_nudges(uid, result.day)
        assert len(deliveries) == 1
        assert deliveries[0].nudge_id == result.selections[uid][0].nudge_id

    def test_empty_selection_is_success(self, published_world):
        population, snapshot, result, store = published_world
        empties = [u for u, items in result.selections.items() if not items]
        if empties:
            assert store.get_nudges(empties[0], result.day) == []

    def test_unknown_user_not_found(self, published_world):
        *_, store = published_world
        with pytest.raises(UnknownUserError):
            store.get_nudges("ghost", day=published_world[2].day)

    def test_future_day_unavailable(self, published_world):
        population, snapshot, result, store = published_world
        with pytest.raises(RunUnavailableError):
            store.get_nudges(population.participants[0].user_id, result.day + 5)

    def test_fetch_marked_once(self, published_world):
        population, snapshot, result, store = published_world
        uid = next(u for u, items in sorted(result.selections.items()) if items)
        first = store.get_nudges(uid, result.day)
        second = store.get_nudges(uid, result.day)
        assert first[0].status in ("generated", "fetched")
        assert second[0].status == "fetched"
        keys = [
            (rec["user_id"], rec["nudge_id"], rec["day"])
            for rec in map(json.loads, store.fetches_path.read_text().splitlines())
        ]
        assert len(keys) == len(set(keys))  # marked at most once


class TestFeedback:
    def test_accepts_valid_and_rejects_unknown(self, published_world):
        population, snapshot, result, store = published_world
        uid, items = next(
            (u, items) for u, items in sorted(result.selections.items()) if items
        )
        day = result.day
        outcome = store.post_feedback(
            [
                {"user_id": uid, "nudge_id": items[0].nudge_id, "event": "opened", "day": day},
                {"user_id": uid, "nudge_id": "n_missing", "event": "opened", "day": day},
                {"user_id": uid, "nudge_id": items[0].nudge_id, "event": "bogus", "day": day},
            ]
        )
        assert outcome.accepted == 1
        assert len(outcome.rejections) == 2
        reasons = " | ".join(r.reason for r in outcome.rejections)
        assert "no generated delivery" in reasons
        assert "unknown event type" in reasons

    def test_rating_without_open_accepted(self, published_world):
        population, snapshot, result, store = published_world
        uid, items = next(
            (u, items) for u, items in sorted(result.selections.items()) if items
        )
        outcome = store.post_feedback(
            [
                {
                    "user_id": uid,
                    "nudge_id": items[0].nudge_id,
                    "event": "rated_useful",
                    "day": result.day,
                }
            ]
        )
        assert outcome.accepted == 1

    def test_loop_closure_accepted_events_become_graph_delta(self, published_world):
        population, snapshot, result, store = published_world
        accepted = store.pending_feedback()
        assert accepted  # earlier tests appended some
        base_events = list(population.events)
        new_result = construct_graph(
            population.templates,
            population.participants,
            base_events + accepted,
            population.catalog,
        )
        old_result = construct_graph(
            population.templates, population.participants, base_events, population.catalog
        )
        added, removed = triplet_diff(old_result.snapshot, new_result.snapshot)
        assert removed == set()
        expected = {
            (user(e.user_id), e.event, nudge(e.nudge_id))
            for e in accepted
            if (user(e.user_id), e.event, nudge(e.nudge_id))
            not in {t.key for t in old_result.snapshot.triplets}
        }
        assert added == expected


class TestIngestion:
    def test_accept_reject_and_dedupe(self, tmp_path, tiny_catalog):
        store = ServingStore(tmp_path)
        path = tmp_path / "drop.jsonl"
        rows = [
            {"user_id": "u1", "fields": {"age": 30, "bmi": 22}},
            {"user_id": "u2", "fields": {"bmi": "not-a-number"}},
            {"user_id": "u1", "fields": {"age": 41, "bmi": 23}},
            {"fields": {"age": 10}},
        ]
        path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        result = store.ingest_participants(path, tiny_catalog)
        assert result.accepted == 1
        assert [r.user_id for r in result.records] == ["u1"]
        assert result.records[0].fields["age"] == 41
        lines = {line for line, _ in result.rejections}
        assert lines == {1, 2, 4}  # dupe, gap, missing id
        staged = store.staged_participants()
        assert [p.user_id for p in staged] == ["u1"]

    def test_unparseable_file_hard_error(self, tmp_path, tiny_catalog):
        store = ServingStore(tmp_path)
        path = tmp_path / "drop.jsonl"
        path.write_text("{not json}\n")
        with pytest.raises(Exception):
            store.ingest_participants(path, tiny_catalog)


class TestPIISchemas:
    def test_no_pii_fields_in_serving_schemas(self):
        for schema, names in schema_field_names().items():
            assert not set(n.lower() for n in names) & PII_FIELD_NAMES, schema

    def test_synth_participant_fields_are_pii_free(self):
        population = generate_population(PopulationSpec(n_users=3, n_nudges=4, seed=0))
        for person in population.participants:
            assert not set(f.lower() for f in person.fields) & PII_FIELD_NAMES


class TestHttpApi:
    @pytest.fixture()
    def client(self, published_world):
        from fastapi.testclient import TestClient

        *_, store = published_world
        return TestClient(create_app(store))

    def test_fetch_endpoint(self, client, published_world):
        population, snapshot, result, store = published_world
        uid = next(u for u, items in sorted(result.selections.items()) if items)
        response = client.get(f"/nudges/{uid}", params={"day": result.day})
        assert response.status_code == 200
        body = response.json()
        assert body["user_id"] == uid
        assert len(body["nudges"]) == 1
        assert body["nudges"][0]["text"]

    def test_fetch_unknown_user_404(self, client, published_world):
        result = published_world[2]
        response = client.get("/nudges/ghost", params={"day": result.day})
        assert response.status_code == 404

    def test_fetch_future_day_409(self, client, published_world):
        population, *_ = published_world
        uid = population.participants[0].user_id
        response = client.get(f"/nudges/{uid}", params={"day": 999})
        assert response.status_code == 409

    def test_feedback_endpoint(self, client, published_world):
        population, snapshot, result, store = published_world
        uid, items = next(
            (u, items) for u, items in sorted(result.selections.items()) if items
        )
        response = client.post(
            "/feedback",
            json={
                "events": [
                    {
                        "user_id": uid,
                        "nudge_id": items[0].nudge_id,
                        "event": "opened",
                        "day": result.day,
                    },
                    {
                        "user_id": uid,
                        "nudge_id": "nope",
                        "event": "opened",
                        "day": result.day,
                    },
                ]
            },
        )
        assert response.status_code == 200
        body = response.json()
        assert body["accepted"] == 1
        assert len(body["rejected"]) == 1

    def test_health_endpoint(self, client, published_world):
        result = published_world[2]
        response = client.get("/health")
        assert response.status_code == 200
        body = response.json()
        assert body["status"] == "ok"
        assert body["last_run_day"] == result.day
        assert "batches_retried" in body["telemetry"]
