"""Tests for audit orchestration: evaluation, budgets, ranking, formatting."""

from __future__ import annotations

import random

import pytest

from factories import make_subgroup
from recourse_audit.actions import INFINITE, Action
from recourse_audit.audit import (
    AuditConfig,
    DefinitionSpec,
    aggregated_rankings,
    default_battery,
    derive_budgets,
    display_actions,
    evaluate_subgroups,
    format_csc,
    format_score,
    rank_subgroups,
    ranking_analysis,
    resolve_c_inf,
    run_audit,
)
from recourse_audit.metrics import EvaluatedAction, MetricOutcome, Subgroup, metric_equal_choice
from recourse_audit.mining import Predicate, SubgroupSeed, generate_actions, generate_subgroups
from recourse_audit.model import Predictor, train_logistic
from recourse_audit.schema import Dataset, FeatureSchema, split_affected


def synthetic_dataset(n=80, seed=3):
    rng = random.Random(seed)
    schema = [
        FeatureSchema("sex", "categorical", ("F", "M")),
        FeatureSchema("dept", "categorical", ("sales", "tech")),
        FeatureSchema("hours", "ordinal", ("low", "mid", "high")),
        FeatureSchema("score", "numerical", (0.0, 100.0)),
    ]
    rows = []
    for _ in range(n):
        rows.append(
            (
                rng.choice(("F", "M")),
                rng.choice(("sales", "tech")),
                rng.choice(("low", "mid", "high")),
                float(rng.choice((20, 50, 80))),
            )
        )
    return Dataset(schema, "sex", rows)


def synthetic_labels(dataset):
    labels = []
    for row in dataset.rows:
        good = (row[1] == "tech") + (row[2] == "high") + (row[3] >= 50.0)
        labels.append(1 if good >= 2 else -1)
    return labels


class Opaque(Predictor):
    """Hides the fast-scoring interface so the generic batch path is used."""

    def __init__(self, inner):
        self._inner = inner

    def predict_batch(self, rows):
        return self._inner.predict_batch(rows)


def outcome(unfairness, bias=0):
    if unfairness == 0:
        return MetricOutcome(0.0, 0.0, 0, True, None)
    return MetricOutcome(0.0, 1.0, unfairness, False, bias)


def tagged_subgroup(tag):
    return Subgroup(Predicate.make([("f", tag)]), (0,), (1000,), 0.1, 0.1, ())


class TestDefinitionSpec:
    def test_ids(self):
        assert DefinitionSpec("cost_of_effectiveness", viewpoint="macro", phi=0.3).id == (
            "cost_of_effectiveness_macro_phi0.3"
        )
        assert DefinitionSpec("equal_choice", phi=0.7).id == "equal_choice_phi0.7"
        assert DefinitionSpec("effectiveness_within_budget", budget=3.0).id == (
            "effectiveness_within_budget_micro_budget3"
        )
        assert DefinitionSpec("mean_recourse").id == "mean_recourse_conditional"
        assert DefinitionSpec("fair_tradeoff", alpha=0.05).id == "fair_tradeoff_micro_alpha0.05"

    def test_displays(self):
        assert DefinitionSpec("cost_of_effectiveness", viewpoint="macro", phi=0.3).display == (
            "Equal Cost of Effectiveness (macro, phi = 0.3)"
        )
        assert DefinitionSpec("equal_choice", phi=0.7).display == (
            "Equal Choice for Recourse (phi = 0.7)"
        )
        assert DefinitionSpec("equal_effectiveness").display == "Equal Effectiveness"
        assert DefinitionSpec("equal_effectiveness", viewpoint="macro").display == (
            "Equal Effectiveness (macro)"
        )
        assert DefinitionSpec("effectiveness_within_budget", budget=3.0).display == (
            "Equal Effectiveness within Budget (budget = 3)"
        )
        assert DefinitionSpec("mean_recourse").display == "Equal Conditional Mean Recourse"
        assert DefinitionSpec("mean_recourse", conditional=False).display == "Equal Mean Recourse"
        assert DefinitionSpec("fair_tradeoff", alpha=0.05).display == (
            "Fair Effectiveness-Cost Trade-Off (alpha = 0.05)"
        )

    def test_validation(self):
        with pytest.raises(ValueError, match="unknown metric"):
            DefinitionSpec("equal_outcome")
        with pytest.raises(ValueError, match="phi is required"):
            DefinitionSpec("equal_choice")
        with pytest.raises(ValueError, match="budget is required"):
            DefinitionSpec("effectiveness_within_budget")

    def test_evaluate_dispatches(self):
        sub = make_subgroup([(1.0, range(3), range(8)), (2.0, range(6), range(8))])
        spec = DefinitionSpec("equal_choice", phi=0.5)
        assert spec.evaluate(sub, 10.0) == metric_equal_choice(sub, 0.5)

    def test_unconditional_mean_recourse_uses_resolved_c_inf(self):
        sub = make_subgroup([(1.0, range(10), [])], n0=10, n1=10)
        out = DefinitionSpec("mean_recourse", conditional=False).evaluate(sub, 7.0)
        assert out.score0 == 1.0
        assert out.score1 == 7.0


class TestDefaultBattery:
    def test_twelve_definitions_in_order(self):
        battery = default_battery([3.0, 6.0, 9.0])
        assert len(battery) == 12
        assert [d.id for d in battery] == [
            "cost_of_effectiveness_macro_phi0.3",
            "cost_of_effectiveness_macro_phi0.7",
            "equal_choice_phi0.3",
            "equal_choice_phi0.7",
            "equal_effectiveness_micro",
            "effectiveness_within_budget_micro_budget3",
            "effectiveness_within_budget_micro_budget6",
            "effectiveness_within_budget_micro_budget9",
            "cost_of_effectiveness_micro_phi0.3",
            "cost_of_effectiveness_micro_phi0.7",
            "mean_recourse_conditional",
            "fair_tradeoff_micro_alpha0.05",
        ]

    def test_equal_budgets_collapse(self):
        battery = default_battery([2.0, 2.0, 2.0])
        within = [d for d in battery if d.metric == "effectiveness_within_budget"]
        assert len(within) == 1
        assert len(battery) == 10


class TestDeriveBudgets:
    def test_nearest_rank_percentiles(self):
        subs = [
            make_subgroup([(float(c), range(10), range(10))], n0=10, n1=10)
            for c in range(1, 11)
        ]
        assert derive_budgets(subs, (30.0, 60.0, 90.0)) == [3.0, 6.0, 9.0]

    def test_side_without_half_effectiveness_excluded(self):
        reaches = make_subgroup([(4.0, range(10), range(10))], n0=10, n1=10)
        lopsided = make_subgroup([(1.0, [], range(10))], n0=10, n1=10)
        assert derive_budgets([lopsided, reaches], (50.0,)) == [4.0]

    def test_larger_side_cost_wins(self):
        # Side 0 reaches 50% at cost 2, side 1 only at cost 5.
        sub = make_subgroup(
            [(2.0, range(5), range(2)), (5.0, range(5), range(9))], n0=10, n1=10
        )
        assert derive_budgets([sub], (100.0,)) == [5.0]

    def test_no_finite_values_rejected(self):
        lopsided = make_subgroup([(1.0, [], range(10))], n0=10, n1=10)
        with pytest.raises(ValueError, match="cannot derive budgets"):
            derive_budgets([lopsided], (30.0,))

    def test_bad_percentile_rejected(self):
        sub = make_subgroup([(1.0, range(10), range(10))], n0=10, n1=10)
        with pytest.raises(ValueError, match="percentiles"):
            derive_budgets([sub], (0.0,))


class TestResolveCinf:
    def test_twice_largest_finite_cost(self):
        subs = [
            make_subgroup([(3.0, [0], [0]), (INFINITE, [0], [0])]),
            make_subgroup([(5.5, [0], [0])]),
        ]
        assert resolve_c_inf(subs) == 11.0

    def test_fallback_without_finite_costs(self):
        assert resolve_c_inf([make_subgroup([])]) == 1.0
        assert resolve_c_inf([make_subgroup([(INFINITE, [0], [0])])]) == 1.0


class TestRankSubgroups:
    def test_competition_ranking_with_fair_last(self):
        spec = DefinitionSpec("equal_effectiveness")
        scored = [
            (tagged_subgroup("a"), outcome(2.0)),
            (tagged_subgroup("b"), outcome(0.5)),
            (tagged_subgroup("c"), outcome(INFINITE)),
            (tagged_subgroup("d"), outcome(0)),
            (tagged_subgroup("e"), outcome(2.0)),
        ]
        ranked = rank_subgroups(spec, scored)
        tags = [e.subgroup.predicate.value("f") for e in ranked.entries]
        assert tags == ["c", "a", "e", "b", "d"]
        assert [e.rank for e in ranked.entries] == [1, 2, 2, 4, None]

    def test_ties_and_fair_in_predicate_order(self):
        spec = DefinitionSpec("equal_effectiveness")
        scored = [
            (tagged_subgroup("z"), outcome(1.0)),
            (tagged_subgroup("a"), outcome(1.0)),
            (tagged_subgroup("n"), outcome(0)),
            (tagged_subgroup("b"), outcome(0)),
        ]
        ranked = rank_subgroups(spec, scored)
        tags = [e.subgroup.predicate.value("f") for e in ranked.entries]
        assert tags == ["a", "z", "b", "n"]
        assert [e.rank for e in ranked.entries] == [1, 1, None, None]

    def test_all_fair(self):
        spec = DefinitionSpec("equal_effectiveness")
        ranked = rank_subgroups(spec, [(tagged_subgroup("a"), outcome(0))])
        assert [e.rank for e in ranked.entries] == [None]


class TestRankingAnalysis:
    def test_counts(self):
        spec = DefinitionSpec("equal_effectiveness")
        scored = [(tagged_subgroup(f"s{i:02d}"), outcome(u, bias=i % 2)) for i, u in
                  enumerate([5.0, 5.0, 4.0, 3.0, 2.0, 2.0, 1.0, 0.5, 0, 0])]
        rows = ranking_analysis([rank_subgroups(spec, scored)])
        row = rows[0]
        # Ten entries: top decile holds one, the head of an eight-strong unfair pool.
        assert row["rank_one_count"] == 2
        assert row["top_count"] == 1
        assert row["bias_against_0"] + row["bias_against_1"] == 1

    def test_top_slice_capped_by_unfair_pool(self):
        spec = DefinitionSpec("equal_effectiveness")
        scored = [(tagged_subgroup("a"), outcome(1.0, bias=1))]
        scored += [(tagged_subgroup(f"f{i}"), outcome(0)) for i in range(30)]
        row = ranking_analysis([rank_subgroups(spec, scored)])[0]
        # ceil(10% of 31) = 4 candidate slots, but only one unfair entry exists.
        assert row["top_count"] == 1
        assert row["bias_against_1"] == 1


class TestAggregatedRankings:
    def test_mean_rank_over_max_tier(self):
        spec_i = DefinitionSpec("equal_effectiveness")
        spec_j = DefinitionSpec("equal_choice", phi=0.3)
        subs = [tagged_subgroup(f"s{i}") for i in range(10)]
        scored_i = [(subs[0], outcome(9.0)), (subs[1], outcome(9.0))]
        scored_i += [(s, outcome(8.0 - k)) for k, s in enumerate(subs[2:])]
        # Under j the two rank-1 subgroups of i land at ranks 4 and 6 of 10.
        u_j = [7.0, 5.0, 10.0, 9.0, 8.0, 6.0, 4.0, 3.0, 2.0, 1.0]
        scored_j = [(s, outcome(u_j[i])) for i, s in enumerate(subs)]
        ranked_i = rank_subgroups(spec_i, scored_i)
        ranked_j = rank_subgroups(spec_j, scored_j)
        assert [e.rank for e in ranked_j.entries if e.subgroup in (subs[0], subs[1])] == [4, 6]
        matrix = aggregated_rankings([ranked_i, ranked_j])
        assert matrix[0][0] is None and matrix[1][1] is None
        assert matrix[0][1] == pytest.approx(0.5)

    def test_fair_ranks_after_last_unfair_tier(self):
        spec_i = DefinitionSpec("equal_effectiveness")
        spec_j = DefinitionSpec("equal_choice", phi=0.3)
        a, b, c, d = (tagged_subgroup(t) for t in "abcd")
        ranked_i = rank_subgroups(spec_i, [(a, outcome(2.0)), (b, outcome(1.0)),
                                           (c, outcome(1.0)), (d, outcome(0.5))])
        # Under j subgroup a is fair, so it takes the position after j's 3 tiers.
        ranked_j = rank_subgroups(spec_j, [(a, outcome(0)), (b, outcome(3.0)),
                                           (c, outcome(2.0)), (d, outcome(1.0))])
        matrix = aggregated_rankings([ranked_i, ranked_j])
        assert matrix[0][1] == pytest.approx(1.0)

    def test_row_without_rank_one_is_empty(self):
        spec_i = DefinitionSpec("equal_effectiveness")
        spec_j = DefinitionSpec("equal_choice", phi=0.3)
        a, b = tagged_subgroup("a"), tagged_subgroup("b")
        ranked_i = rank_subgroups(spec_i, [(a, outcome(0)), (b, outcome(0))])
        ranked_j = rank_subgroups(spec_j, [(a, outcome(1.0)), (b, outcome(0.5))])
        matrix = aggregated_rankings([ranked_i, ranked_j])
        assert matrix[0] == [None, None]
        assert matrix[1][0] is not None


class RulePredictor(Predictor):
    def __init__(self, rule):
        self.rule = rule

    def predict_batch(self, rows):
        return [1 if self.rule(row) else -1 for row in rows]


class TestEvaluateSubgroups:
    def test_tiny_pipeline_by_hand(self):
        schema = [
            FeatureSchema("sex", "categorical", ("F", "M")),
            FeatureSchema("dept", "categorical", ("a", "b")),
        ]
        rows = [("F", "a"), ("F", "a"), ("M", "a"), ("M", "a"), ("F", "b"), ("M", "b")]
        ds = Dataset(schema, "sex", rows)
        predictor = RulePredictor(lambda row: row[1] == "b")
        split = split_affected(ds, predictor)
        seeds = generate_subgroups(ds, split, 0.5)
        actions = generate_actions(ds, (4, 5), 0.5)
        subs, stats = evaluate_subgroups(ds, split, predictor, seeds, actions)
        assert len(subs) == 1
        sub = subs[0]
        assert sub.predicate.describe() == "dept=a"
        assert sub.members0 == (0, 1) and sub.members1 == (2, 3)
        assert len(sub.actions) == 1
        act = sub.actions[0]
        assert act.action.describe() == "dept=b"
        assert act.cost == 1.0
        assert act.flipped0 == frozenset({0, 1}) and act.flipped1 == frozenset({2, 3})
        assert stats == {"excluded_empty_side": 0, "infeasible_pairs": 0}

    def test_one_sided_subgroup_excluded_and_counted(self):
        schema = [
            FeatureSchema("sex", "categorical", ("F", "M")),
            FeatureSchema("dept", "categorical", ("a", "b")),
        ]
        ds = Dataset(schema, "sex", [("F", "a"), ("M", "b"), ("F", "b")])
        predictor = RulePredictor(lambda row: False)
        split = split_affected(ds, predictor)
        seeds = [SubgroupSeed(Predicate.make([("dept", "a")]), 1.0, 1.0)]
        subs, stats = evaluate_subgroups(ds, split, predictor, seeds, ())
        assert subs == []
        assert stats["excluded_empty_side"] == 1

    def test_infeasible_actions_dropped_and_counted(self):
        schema = [
            FeatureSchema("sex", "categorical", ("F", "M")),
            FeatureSchema("grade", "ordinal", ("c", "b", "a"), monotone="non-decreasing"),
        ]
        ds = Dataset(schema, "sex", [("F", "b"), ("M", "b"), ("F", "a"), ("M", "c")])
        predictor = RulePredictor(lambda row: row[1] == "a")
        split = split_affected(ds, predictor)
        seeds = [SubgroupSeed(Predicate.make([("grade", "b")]), 1.0, 1.0)]
        actions = (Action.make([("grade", "c")]), Action.make([("grade", "a")]))
        subs, stats = evaluate_subgroups(ds, split, predictor, seeds, actions)
        assert stats["infeasible_pairs"] == 1
        assert len(subs[0].actions) == 1
        assert subs[0].actions[0].action.describe() == "grade=a"
        assert subs[0].actions[0].cost == 1.0

    def test_fast_path_matches_generic_path(self):
        ds = synthetic_dataset()
        predictor = train_logistic(ds, synthetic_labels(ds), learning_rate=0.5, epochs=200)
        split = split_affected(ds, predictor)
        assert len(split.side0) > 0 and len(split.side1) > 0
        seeds = generate_subgroups(ds, split, 0.2)
        affected = set(split.affected)
        unaffected = tuple(i for i in range(len(ds.rows)) if i not in affected)
        actions = generate_actions(ds, unaffected, 0.2)
        assert seeds and actions
        fast, fast_stats = evaluate_subgroups(ds, split, predictor, seeds, actions)
        slow, slow_stats = evaluate_subgroups(ds, split, Opaque(predictor), seeds, actions)
        assert fast == slow
        assert fast_stats == slow_stats

    def test_worker_count_does_not_change_results(self):
        ds = synthetic_dataset()
        predictor = train_logistic(ds, synthetic_labels(ds), learning_rate=0.5, epochs=200)
        split = split_affected(ds, predictor)
        seeds = generate_subgroups(ds, split, 0.2)
        affected = set(split.affected)
        unaffected = tuple(i for i in range(len(ds.rows)) if i not in affected)
        actions = generate_actions(ds, unaffected, 0.2)
        one, stats_one = evaluate_subgroups(ds, split, predictor, seeds, actions, workers=1)
        four, stats_four = evaluate_subgroups(ds, split, predictor, seeds, actions, workers=4)
        assert one == four
        assert stats_one == stats_four


class TestRunAudit:
    def run(self, workers=1, **kwargs):
        ds = synthetic_dataset()
        predictor = train_logistic(ds, synthetic_labels(ds), learning_rate=0.5, epochs=200)
        return run_audit(ds, predictor, AuditConfig(min_support=0.2, workers=workers, **kwargs))

    def fingerprint(self, report):
        return [
            (
                ranked.definition.id,
                [
                    (e.subgroup.predicate.describe(), e.rank, e.outcome)
                    for e in ranked.entries
                ],
            )
            for ranked in report.rankings
        ]

    def test_battery_report_shape(self):
        report = self.run()
        assert report.protected == "sex"
        assert report.protected_labels == ("F", "M")
        assert len(report.definitions) == len(report.rankings)
        assert 10 <= len(report.definitions) <= 12
        n = len(report.subgroups)
        for ranked in report.rankings:
            assert len(ranked.entries) == n
            unfair = [e for e in ranked.entries if e.rank is not None]
            if unfair:
                assert unfair[0].rank == 1
                assert [e.rank for e in unfair] == sorted(e.rank for e in unfair)
            for e in ranked.entries[len(unfair):]:
                assert e.rank is None and e.outcome.fair
        assert len(report.analysis) == len(report.definitions)
        assert len(report.aggregation) == len(report.definitions)
        summary = report.summary
        assert summary["affected"] == summary["affected_side0"] + summary["affected_side1"]
        assert summary["rows"] == summary["affected"] + summary["unaffected"]
        assert summary["subgroups_audited"] + summary["excluded_empty_side"] == summary["subgroups_mined"]
        assert summary["c_inf"] > 0

    def test_deterministic_across_workers(self):
        assert self.fingerprint(self.run(workers=1)) == self.fingerprint(self.run(workers=4))

    def test_explicit_definitions_respected(self):
        specs = (DefinitionSpec("equal_effectiveness"), DefinitionSpec("equal_choice", phi=0.3))
        report = self.run(definitions=specs)
        assert report.definitions == specs

    def test_duplicate_definitions_rejected(self):
        specs = (DefinitionSpec("equal_effectiveness"), DefinitionSpec("equal_effectiveness"))
        with pytest.raises(ValueError, match="duplicate"):
            self.run(definitions=specs)

    def test_explicit_budgets_skip_derivation(self):
        report = self.run(budgets=(1.0, 2.5))
        ids = [d.id for d in report.definitions]
        assert "effectiveness_within_budget_micro_budget1" in ids
        assert "effectiveness_within_budget_micro_budget2.5" in ids
        assert report.summary["budgets"] == [1.0, 2.5]
        assert report.summary["budget_note"] == "configured"

    def test_configured_c_inf_respected(self):
        report = self.run(c_inf=42.0)
        assert report.summary["c_inf"] == 42.0
        assert report.summary["c_inf_note"] == "configured"


class TestDisplayActions:
    def spec_subgroup(self):
        return make_subgroup(
            [
                (1.0, range(2), range(8)),
                (2.0, range(6), range(5)),
                (4.0, range(9), range(2)),
                (INFINITE, range(9), range(9)),
            ],
            n0=10,
            n1=10,
        )

    def test_threshold_metric_filters_per_side(self):
        sub = self.spec_subgroup()
        side0, side1 = display_actions(sub, DefinitionSpec("equal_choice", phi=0.5))
        assert [a.cost for a in side0] == [4.0, 2.0]
        assert [a.cost for a in side1] == [1.0, 2.0]

    def test_budget_metric_filters_by_cost(self):
        sub = self.spec_subgroup()
        side0, side1 = display_actions(
            sub, DefinitionSpec("effectiveness_within_budget", budget=2.0)
        )
        assert [a.cost for a in side0] == [2.0, 1.0]
        assert [a.cost for a in side1] == [1.0, 2.0]

    def test_default_shows_all_finite_sorted_by_side_effectiveness(self):
        sub = self.spec_subgroup()
        side0, side1 = display_actions(sub, DefinitionSpec("equal_effectiveness"))
        assert [a.cost for a in side0] == [4.0, 2.0, 1.0]
        assert [a.cost for a in side1] == [1.0, 2.0, 4.0]


class TestFormatScore:
    def test_values(self):
        assert format_score(INFINITE) == "inf"
        assert format_score(6) == "6"
        assert format_score(2.0) == "2"
        assert format_score(0.5) == "0.5"
        assert format_score(0.123456789) == "0.123457"


class TestFormatCsc:
    def test_full_block(self):
        schema = [
            FeatureSchema("sex", "categorical", ("F", "M")),
            FeatureSchema("dept", "categorical", ("a", "b")),
            FeatureSchema("hours", "ordinal", ("low", "high")),
            FeatureSchema("score", "numerical", (0.0, 100.0)),
        ]
        ds = Dataset(schema, "sex", [("F", "a", "low", 20.0), ("M", "a", "low", 20.0)])
        sub = Subgroup(
            predicate=Predicate.make([("dept", "a")]),
            members0=(0, 1),
            members1=(10, 11),
            coverage0=0.5,
            coverage1=0.5,
            actions=(
                EvaluatedAction(Action.make([("hours", "high")]), 2.0,
                                frozenset({0}), frozenset({10, 11})),
                EvaluatedAction(Action.make([("score", 80.0)]), 1.0,
                                frozenset(), frozenset({10})),
            ),
        )
        spec = DefinitionSpec("equal_effectiveness")
        out = spec.evaluate(sub, 1.0)
        block = format_csc(sub, spec, out, ds.protected_values)
        assert block == (
            "If dept=a:\n"
            "    Protected Subgroup = 'M', mean action cost = 1.50\n"
            "        Make hours=high with effectiveness 100.00%\n"
            "        Make score=80 with effectiveness 50.00%\n"
            "    Protected Subgroup = 'F', mean action cost = 1.50\n"
            "        Make hours=high with effectiveness 50.00%\n"
            "        Make score=80 with effectiveness 0.00%\n"
            "    Bias against 'F' due to Equal Effectiveness. Unfairness score = 0.5."
        )

    def test_no_recourse_side_and_infinite_score(self):
        sub = make_subgroup([(2.0, range(1), range(18))], n0=10, n1=25)
        spec = DefinitionSpec("cost_of_effectiveness", viewpoint="micro", phi=0.7)
        out = spec.evaluate(sub, 1.0)
        block = format_csc(sub, spec, out, ("Female", "Male"))
        assert "Protected Subgroup = 'Male', mean action cost = 2.00" in block
        assert "with effectiveness 72.00%" in block
        assert "Protected Subgroup = 'Female', mean action cost = -" in block
        assert "        No recourses for this subgroup." in block
        assert block.endswith(
            "    Bias against 'Female' due to Equal Cost of Effectiveness (micro, phi = 0.7). "
            "Unfairness score = inf."
        )

    def test_fair_block(self):
        sub = make_subgroup([(1.0, range(5), range(5))], n0=10, n1=10)
        spec = DefinitionSpec("equal_effectiveness")
        out = spec.evaluate(sub, 1.0)
        block = format_csc(sub, spec, out, ("F", "M"))
        assert block.endswith("    Fair under Equal Effectiveness.")
