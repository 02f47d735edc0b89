import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nudgekit.entities import nudge, user
from nudgekit.model.network import ScoredPair
from nudgekit.pipeline import (
    DeliveryHistory,
    DeliveryRecord,
    PipelineConfig,
    PipelineConfigError,
    constraints_filter,
    load_history,
    save_history,
)


def pairs_for(uid: str, nudge_ids: list[str]) -> list[ScoredPair]:
    return [
        ScoredPair(user=uid and user(uid), nudge=nudge(nid), score=float(len(nudge_ids) - i))
        for i, nid in enumerate(nudge_ids)
    ]


class TestNegativeRatingFilter:
    def make_history(self, rated_days_ago: int, today: int) -> DeliveryHistory:
        history = DeliveryHistory()
        history.add(
            DeliveryRecord(
                user_id="u1",
                nudge_id="n3",
                day=today - rated_days_ago - 1,
                rating="not_useful",
                rating_day=today - rated_days_ago,
            )
        )
        return history

    def test_rated_three_days_ago_removed(self):
        today = 20
        cfg = PipelineConfig(d_neg_filter=7, d_recent=0, k_daily=None)
        ranked = {"u1": pairs_for("u1", ["n1", "n3", "n2"])}
        out = constraints_filter(ranked, self.make_history(3, today), cfg, today)
        assert [p.nudge.local_id for p in out["u1"]] == ["n1", "n2"]

    def test_rated_eight_days_ago_retained(self):
        today = 20
        cfg = PipelineConfig(d_neg_filter=7, d_recent=0, k_daily=None)
        ranked = {"u1": pairs_for("u1", ["n1", "n3", "n2"])}
        out = constraints_filter(ranked, self.make_history(8, today), cfg, today)
        assert [p.nudge.local_id for p in out["u1"]] == ["n1", "n3", "n2"]

    def test_zero_lookback_is_identity(self):
        today = 20
        cfg = PipelineConfig(d_neg_filter=0, d_recent=0, k_daily=None)
        ranked = {"u1": pairs_for("u1", ["n1", "n3"])}
        out = constraints_filter(ranked, self.make_history(0, today), cfg, today)
        assert [p.nudge.local_id for p in out["u1"]] == ["n1", "n3"]


class TestBudget:
    def test_budget_one_keeps_top_survivor(self):
        cfg = PipelineConfig(k_daily=1, d_neg_filter=0, d_recent=0)
        ranked = {"u1": pairs_for("u1", ["n5", "n4", "n3", "n2", "n1"])}
        out = constraints_filter(ranked, DeliveryHistory(), cfg, today=0)
        assert [p.nudge.local_id for p in out["u1"]] == ["n5"]

    def test_budget_exceeding_survivors(self):
        cfg = PipelineConfig(k_daily=3, d_neg_filter=0, d_recent=0)
        ranked = {"u1": pairs_for("u1", ["n2", "n1"])}
        out = constraints_filter(ranked, DeliveryHistory(), cfg, today=0)
        assert len(out["u1"]) == 2  # min(3, 2)

    def test_unlimited_budget(self):
        cfg = PipelineConfig(k_daily=None, d_neg_filter=0, d_recent=0)
        ranked = {"u1": pairs_for("u1", [f"n{i}" for i in range(10)])}
        out = constraints_filter(ranked, DeliveryHistory(), cfg, today=0)
        assert len(out["u1"]) == 10


class TestRecency:
    def test_recently_sent_removed(self):
        history = DeliveryHistory()
        history.record_sent("u1", "n1", day=18)
        cfg = PipelineConfig(d_recent=7, d_neg_filter=0, k_daily=None)
        ranked = {"u1": pairs_for("u1", ["n1", "n2"])}
        out = constraints_filter(ranked, history, cfg, today=20)
        assert [p.nudge.local_id for p in out["u1"]] == ["n2"]

    def test_sent_long_ago_retained(self):
        history = DeliveryHistory()
        history.record_sent("u1", "n1", day=5)
        cfg = PipelineConfig(d_recent=7, d_neg_filter=0, k_daily=None)
        ranked = {"u1": pairs_for("u1", ["n1", "n2"])}
        out = constraints_filter(ranked, history, cfg, today=20)
        assert [p.nudge.local_id for p in out["u1"]] == ["n1", "n2"]


@st.composite
def filter_case(draw):
    n_nudges = draw(st.integers(1, 8))
    nudge_ids = [f"n{i}" for i in range(n_nudges)]
    ranked_ids = draw(st.permutations(nudge_ids))
    today = draw(st.integers(10, 40))
    cfg = PipelineConfig(
        k_daily=draw(st.one_of(st.none(), st.integers(0, 5))),
        d_neg_filter=draw(st.integers(0, 10)),
        d_recent=draw(st.integers(0, 10)),
        p_diversity=0.0,
    )
    history = DeliveryHistory()
    for nid in nudge_ids:
        if draw(st.booleans()):
            sent_day = draw(st.integers(0, today))
            rating = draw(st.sampled_from([None, "useful", "not_useful"]))
            rating_day = min(today, sent_day + draw(st.integers(0, 5)))
            history.add(
                DeliveryRecord(
                    user_id="u1",
                    nudge_id=nid,
                    day=sent_day,
                    rating=rating,
                    rating_day=rating_day if rating else None,
                )
            )
    return ranked_ids, history, cfg, today


class TestFilterLaws:
    @given(filter_case())
    @settings(max_examples=300, deadline=None)
    def test_budget_exclusion_and_order_laws(self, case):
        ranked_ids, history, cfg, today = case
        ranked = {"u1": pairs_for("u1", list(ranked_ids))}
        out = constraints_filter(ranked, history, cfg, today)["u1"]
        out_ids = [p.nudge.local_id for p in out]

        negative = history.negatively_rated("u1", today, cfg.d_neg_filter)
        recent = history.recently_sent("u1", today, cfg.d_recent)
        survivors = [n for n in ranked_ids if n not in negative and n not in recent]
        k_recommended = len(survivors)
        expected_len = (
            k_recommended if cfg.k_daily is None else min(cfg.k_daily, k_recommended)
        )
        # Budget law, exclusion laws, and order preservation.
        assert len(out_ids) == expected_len
        assert not set(out_ids) & negative
        assert not set(out_ids) & recent
        assert out_ids == survivors[: len(out_ids)]


class TestHistoryPersistence:
    def test_round_trip(self, tmp_path):
        history = DeliveryHistory()
        history.record_sent("u1", "n1", day=3)
        history.apply_feedback("u1", "n1", "opened", day=3)
        history.apply_feedback("u1", "n1", "rated_not_useful", day=4)
        path = tmp_path / "history.jsonl"
        save_history(history, path)
        loaded = load_history(path)
        assert loaded.records == history.records
        assert loaded.negatively_rated("u1", today=5, lookback=7) == {"n1"}

    def test_feedback_without_delivery_returns_false(self):
        history = DeliveryHistory()
        assert not history.apply_feedback("u1", "n1", "opened", day=3)

    def test_config_validation(self):
        with pytest.raises(PipelineConfigError):
            PipelineConfig(p_diversity=1.5)
        with pytest.raises(PipelineConfigError):
            PipelineConfig(batches=0)
        with pytest.raises(PipelineConfigError):
            PipelineConfig(d_neg_filter=-1)
