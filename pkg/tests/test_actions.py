"""Tests for action application, feasibility, and cost."""

from __future__ import annotations

import pytest

from recourse_audit.actions import INFINITE, Action, CostModel, action_cost, apply_action, is_feasible
from recourse_audit.schema import Dataset, FeatureSchema, SchemaError


def dataset():
    schema = [
        FeatureSchema("sex", "categorical", ("F", "M")),
        FeatureSchema("hours", "ordinal", ("part", "mid", "full", "over"), weight=2.0),
        FeatureSchema("job", "categorical", ("blue", "white", "none"), weight=4.0,
                      forbidden_targets=frozenset({"none"})),
        FeatureSchema("gain", "numerical", (0.0, 100.0), weight=1.0),
        FeatureSchema("age", "numerical", (17.0, 90.0), weight=10.0, monotone="non-decreasing"),
        FeatureSchema("grade", "ordinal", ("c", "b", "a"), monotone="non-decreasing"),
    ]
    rows = [
        ("F", "part", "blue", 0.0, 20.0, "c"),
        ("M", "full", "white", 50.0, 40.0, "b"),
        ("F", "over", "none", 100.0, 60.0, "a"),
    ]
    return Dataset(schema, "sex", rows)


class TestAction:
    def test_canonical_order_and_duplicate_check(self):
        action = Action.make([("job", "white"), ("hours", "full")])
        assert action.features == ("hours", "job")
        with pytest.raises(ValueError, match="twice"):
            Action.make([("job", "white"), ("job", "blue")])

    def test_describe(self):
        assert Action.make([("gain", 50.0), ("job", "white")]).describe() == "gain=50,job=white"


class TestApplyAction:
    def test_only_assigned_features_change(self):
        ds = dataset()
        row = ds.rows[0]
        out = apply_action(Action.make([("hours", "full")]), row, ds)
        assert out == ("F", "full", "blue", 0.0, 20.0, "c")
        assert ds.rows[0] == row

    def test_target_outside_domain_rejected(self):
        ds = dataset()
        with pytest.raises(SchemaError, match="outside domain"):
            apply_action(Action.make([("hours", "never")]), ds.rows[0], ds)


class TestFeasibility:
    def test_forbidden_target_infeasible(self):
        ds = dataset()
        assert not is_feasible(Action.make([("job", "none")]), {"job": "blue"}, ds)

    def test_lowering_monotone_ordinal_infeasible(self):
        ds = dataset()
        assert not is_feasible(Action.make([("grade", "c")]), {"grade": "b"}, ds)
        assert is_feasible(Action.make([("grade", "a")]), {"grade": "b"}, ds)

    def test_lowering_monotone_numerical_infeasible(self):
        ds = dataset()
        assert not is_feasible(Action.make([("age", 30.0)]), {"age": 40.0}, ds)
        assert is_feasible(Action.make([("age", 50.0)]), {"age": 40.0}, ds)

    def test_free_features_move_both_ways(self):
        ds = dataset()
        assert is_feasible(Action.make([("hours", "part")]), {"hours": "over"}, ds)


class TestActionCost:
    def test_ordinal_cost_is_weighted_rank_distance(self):
        # full -> over is one rank step at weight 2.
        assert action_cost(Action.make([("hours", "over")]), {"hours": "full"}, dataset()) == 2.0

    def test_categorical_cost_is_weight(self):
        assert action_cost(Action.make([("job", "white")]), {"job": "blue"}, dataset()) == 4.0

    def test_numerical_cost_uses_dataset_min_max(self):
        # gain spans 0..100 in the data; moving 0 -> 50 is half the span.
        assert action_cost(Action.make([("gain", 50.0)]), {"gain": 0.0}, dataset()) == 0.5

    def test_costs_sum_over_features(self):
        action = Action.make([("hours", "over"), ("job", "white")])
        assert action_cost(action, {"hours": "full", "job": "blue"}, dataset()) == 6.0

    def test_unchanged_assignment_costs_zero(self):
        assert action_cost(Action.make([("job", "white")]), {"job": "white"}, dataset()) == 0.0

    def test_infeasible_cost_is_infinite(self):
        ds = dataset()
        assert action_cost(Action.make([("age", 20.0)]), {"age": 40.0}, ds) == INFINITE
        assert action_cost(Action.make([("job", "none")]), {"job": "blue"}, ds) == INFINITE

    def test_cost_infinite_iff_infeasible(self):
        ds = dataset()
        model = CostModel(ds)
        sources = {"hours": "mid", "job": "blue", "gain": 50.0, "age": 40.0, "grade": "b"}
        targets = [
            ("hours", "part"), ("hours", "over"), ("job", "none"), ("job", "white"),
            ("gain", 0.0), ("age", 17.0), ("age", 90.0), ("grade", "c"), ("grade", "a"),
        ]
        for feature, value in targets:
            action = Action.make([(feature, value)])
            assert (model.cost(action, sources) == INFINITE) == (
                not is_feasible(action, sources, ds)
            )

    def test_constant_across_subgroup_members(self):
        # Cost depends only on the source values the predicate fixes.
        ds = dataset()
        action = Action.make([("hours", "over")])
        costs = {action_cost(action, {"hours": "part"}, ds) for _ in range(3)}
        assert costs == {6.0}
