"""Audit orchestration: evaluate subgroups, score definitions, rank, format.

The pipeline labels the dataset, mines subgroup predicates from the affected
population and candidate actions from the unaffected one, evaluates every
valid (subgroup, action) pair, scores each configured fairness definition on
each subgroup, and ranks subgroups per definition by unfairness.  All steps
are deterministic; the per-subgroup evaluation is a pure map and may run on
worker threads without changing any output byte.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .actions import INFINITE, Action, CostModel, apply_action
from .metrics import (
    EvaluatedAction,
    MetricOutcome,
    Subgroup,
    effectiveness,
    inverse_ecd,
    metric_cost_of_effectiveness,
    metric_effectiveness_within_budget,
    metric_equal_choice,
    metric_equal_effectiveness,
    metric_fair_tradeoff,
    metric_mean_recourse,
)
from .mining import SubgroupSeed, generate_actions, generate_subgroups
from .schema import AffectedSplit, Dataset, format_value, split_affected

METRICS = (
    "equal_effectiveness",
    "equal_choice",
    "effectiveness_within_budget",
    "cost_of_effectiveness",
    "fair_tradeoff",
    "mean_recourse",
)

_METRIC_TITLES = {
    "equal_effectiveness": "Equal Effectiveness",
    "equal_choice": "Equal Choice for Recourse",
    "effectiveness_within_budget": "Equal Effectiveness within Budget",
    "cost_of_effectiveness": "Equal Cost of Effectiveness",
    "fair_tradeoff": "Fair Effectiveness-Cost Trade-Off",
    "mean_recourse": "Equal Mean Recourse",
}


@dataclass(frozen=True)
class DefinitionSpec:
    """One configured fairness definition with its parameters."""

    metric: str
    viewpoint: str = "micro"
    phi: float | None = None
    budget: float | None = None
    alpha: float | None = None
    conditional: bool = True
    c_inf: float | None = None

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}, expected one of {METRICS}")
        if self.metric in ("equal_choice", "cost_of_effectiveness") and self.phi is None:
            raise ValueError(f"{self.metric}: phi is required")
        if self.metric == "effectiveness_within_budget" and self.budget is None:
            raise ValueError(f"{self.metric}: budget is required")

    @property
    def id(self) -> str:
        parts = [self.metric]
        if self.metric == "mean_recourse":
            parts.append("conditional" if self.conditional else "unconditional")
        elif self.metric != "equal_choice":
            parts.append(self.viewpoint)
        if self.phi is not None:
            parts.append(f"phi{format_value(float(self.phi))}")
        if self.budget is not None:
            parts.append(f"budget{format_value(float(self.budget))}")
        if self.alpha is not None:
            parts.append(f"alpha{format_value(float(self.alpha))}")
        return "_".join(parts)

    @property
    def display(self) -> str:
        if self.metric == "mean_recourse":
            return "Equal Conditional Mean Recourse" if self.conditional else "Equal Mean Recourse"
        title = _METRIC_TITLES[self.metric]
        details = []
        shows_viewpoint = self.metric == "cost_of_effectiveness" or (
            self.metric != "equal_choice" and self.viewpoint != "micro"
        )
        if shows_viewpoint:
            details.append(self.viewpoint)
        if self.phi is not None:
            details.append(f"phi = {format_value(float(self.phi))}")
        if self.budget is not None:
            details.append(f"budget = {format_value(float(self.budget))}")
        if self.alpha is not None:
            details.append(f"alpha = {format_value(float(self.alpha))}")
        return f"{title} ({', '.join(details)})" if details else title

    def evaluate(self, sub: Subgroup, resolved_c_inf: float) -> MetricOutcome:
        if self.metric == "equal_effectiveness":
            return metric_equal_effectiveness(sub, self.viewpoint)
        if self.metric == "equal_choice":
            return metric_equal_choice(sub, self.phi)
        if self.metric == "effectiveness_within_budget":
            return metric_effectiveness_within_budget(sub, self.budget, self.viewpoint)
        if self.metric == "cost_of_effectiveness":
            return metric_cost_of_effectiveness(sub, self.phi, self.viewpoint)
        if self.metric == "fair_tradeoff":
            return metric_fair_tradeoff(sub, self.alpha if self.alpha is not None else 0.05, self.viewpoint)
        c_inf = self.c_inf if self.c_inf is not None else resolved_c_inf
        return metric_mean_recourse(sub, self.conditional, None if self.conditional else c_inf)


def default_battery(budgets: Sequence[float], alpha: float = 0.05) -> tuple[DefinitionSpec, ...]:
    """The default definition battery; budgets parameterize the within-budget rows."""
    specs = [
        DefinitionSpec("cost_of_effectiveness", viewpoint="macro", phi=0.3),
        DefinitionSpec("cost_of_effectiveness", viewpoint="macro", phi=0.7),
        DefinitionSpec("equal_choice", phi=0.3),
        DefinitionSpec("equal_choice", phi=0.7),
        DefinitionSpec("equal_effectiveness"),
    ]
    seen = set()
    for budget in budgets:
        if budget not in seen:
            seen.add(budget)
            specs.append(DefinitionSpec("effectiveness_within_budget", budget=budget))
    specs += [
        DefinitionSpec("cost_of_effectiveness", viewpoint="micro", phi=0.3),
        DefinitionSpec("cost_of_effectiveness", viewpoint="micro", phi=0.7),
        DefinitionSpec("mean_recourse", conditional=True),
        DefinitionSpec("fair_tradeoff", alpha=alpha),
    ]
    return tuple(specs)


@dataclass
class AuditConfig:
    """Engine parameters for one audit run."""

    min_support: float = 0.01
    action_min_support: float | None = None
    definitions: tuple[DefinitionSpec, ...] | None = None
    budgets: tuple[float, ...] | None = None
    budget_percentiles: tuple[float, ...] = (30.0, 60.0, 90.0)
    alpha: float = 0.05
    c_inf: float | None = None
    workers: int = 1


@dataclass(frozen=True)
class RankedEntry:
    subgroup: Subgroup
    outcome: MetricOutcome
    rank: int | None  # None marks a FAIR entry


@dataclass(frozen=True)
class RankedList:
    definition: DefinitionSpec
    entries: tuple[RankedEntry, ...]


@dataclass
class AuditReport:
    """Everything one audit run produced."""

    protected: str
    protected_labels: tuple[str, str]
    definitions: tuple[DefinitionSpec, ...]
    subgroups: tuple[Subgroup, ...]
    rankings: tuple[RankedList, ...]
    analysis: list[dict]
    aggregation: list[list[float | None]]
    summary: dict


def evaluate_subgroups(
    dataset: Dataset,
    split: AffectedSplit,
    predictor,
    seeds: Sequence[SubgroupSeed],
    actions: Sequence[Action],
    workers: int = 1,
) -> tuple[list[Subgroup], dict]:
    """Evaluate every valid action on every subgroup.

    Counterfactual labels are computed once per action over the whole
    affected population and reused across subgroups.  Subgroups with an empty
    protected side are dropped and counted; actions infeasible for a subgroup
    (infinite cost) are dropped from that subgroup and counted.
    """
    n_aff = len(split.affected)
    affected = np.fromiter(split.affected, dtype=np.int64, count=n_aff)
    side0 = set(split.side0)
    sides = np.fromiter((0 if r in side0 else 1 for r in split.affected), dtype=np.int8, count=n_aff)

    columns: dict[str, np.ndarray] = {}
    for i, feat in enumerate(dataset.schema):
        values = [dataset.rows[r][i] for r in split.affected]
        if feat.kind == "numerical":
            columns[feat.name] = np.asarray(values, dtype=np.float64)
        else:
            lookup = {v: k for k, v in enumerate(feat.domain)}
            columns[feat.name] = np.fromiter((lookup[v] for v in values), dtype=np.int32, count=n_aff)

    flips = _flip_matrix(dataset, split, predictor, actions)

    by_featureset: dict[tuple[str, ...], list[int]] = {}
    for idx, action in enumerate(actions):
        by_featureset.setdefault(action.features, []).append(idx)

    cost_model = CostModel(dataset)
    pair_cache: dict[tuple, float] = {}

    def pair_cost(feature: str, source, target) -> float:
        key = (feature, source, target)
        if key not in pair_cache:
            pair_cache[key] = cost_model.pair_cost(dataset.feature(feature), source, target)
        return pair_cache[key]

    stats = {"excluded_empty_side": 0, "infeasible_pairs": 0}

    def evaluate_one(seed: SubgroupSeed) -> Subgroup | None:
        predicate = seed.predicate
        mask = np.ones(n_aff, dtype=bool)
        for feature, value in predicate.items:
            feat = dataset.feature(feature)
            code = value if feat.kind == "numerical" else feat.index(value)
            mask &= columns[feature] == code
        pos = np.flatnonzero(mask)
        pos0 = pos[sides[pos] == 0]
        pos1 = pos[sides[pos] == 1]
        if len(pos0) == 0 or len(pos1) == 0:
            return None

        candidates: list[int] = []
        values = predicate.values()
        for featureset in _nonempty_subsets(predicate.features):
            candidates.extend(by_featureset.get(featureset, ()))
        evaluated = []
        infeasible = 0
        for idx in sorted(candidates):
            action = actions[idx]
            if not any(values[f] != v for f, v in action.assignments):
                continue
            cost = 0.0
            for f, v in action.assignments:
                part = pair_cost(f, values[f], v)
                if part == INFINITE:
                    cost = INFINITE
                    break
                cost += part
            if cost == INFINITE:
                infeasible += 1
                continue
            row = flips[idx]
            flipped0 = frozenset(affected[pos0[row[pos0]]].tolist())
            flipped1 = frozenset(affected[pos1[row[pos1]]].tolist())
            evaluated.append(EvaluatedAction(action, cost, flipped0, flipped1))
        subgroup = Subgroup(
            predicate=predicate,
            members0=tuple(affected[pos0].tolist()),
            members1=tuple(affected[pos1].tolist()),
            coverage0=seed.coverage0,
            coverage1=seed.coverage1,
            actions=tuple(evaluated),
        )
        return subgroup, infeasible

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(evaluate_one, seeds, chunksize=64))
    else:
        raw = [evaluate_one(seed) for seed in seeds]

    subgroups = []
    for item in raw:
        if item is None:
            stats["excluded_empty_side"] += 1
        else:
            subgroup, infeasible = item
            subgroups.append(subgroup)
            stats["infeasible_pairs"] += infeasible
    return subgroups, stats


def _nonempty_subsets(features: tuple[str, ...]) -> list[tuple[str, ...]]:
    out = [()]
    for feature in features:  # features already sorted; subsets stay sorted
        out += [subset + (feature,) for subset in out]
    return out[1:]


def _flip_matrix(dataset, split, predictor, actions) -> np.ndarray:
    """Boolean (n_actions, n_affected): does the counterfactual flip to +1."""
    n_aff = len(split.affected)
    flips = np.zeros((len(actions), n_aff), dtype=bool)
    schema_index = {f.name: i for i, f in enumerate(dataset.schema)}
    if hasattr(predictor, "scores_with_overrides"):
        base = [
            predictor.contribution_column(i, [dataset.rows[r][i] for r in split.affected])
            for i in range(len(dataset.schema))
        ]
        for idx, action in enumerate(actions):
            overrides = {
                schema_index[f]: predictor.contribution_value(schema_index[f], v)
                for f, v in action.assignments
            }
            flips[idx] = predictor.scores_with_overrides(base, overrides) >= 0.0
        return flips
    rows = [dataset.rows[r] for r in split.affected]
    for idx, action in enumerate(actions):
        counterfactuals = [apply_action(action, row, dataset) for row in rows]
        labels = predictor.predict_batch(counterfactuals)
        flips[idx] = np.fromiter((l == 1 for l in labels), dtype=bool, count=n_aff)
    return flips


def derive_budgets(subgroups: Sequence[Subgroup], percentiles: Sequence[float]) -> list[float]:
    """Budgets from the cost of reaching 50% effectiveness on both sides.

    Per subgroup, take each side's minimum cost to half micro-effectiveness
    and keep the larger of the two when both are finite; budgets are
    nearest-rank percentiles of the collected values.
    """
    values = []
    for sub in subgroups:
        costs = [inverse_ecd(sub.ecd(side, "micro"), 0.5) for side in (0, 1)]
        worst = max(costs)
        if worst != INFINITE:
            values.append(worst)
    if not values:
        raise ValueError("cannot derive budgets: no subgroup reaches 50% on both sides at finite cost")
    values.sort()
    out = []
    for p in percentiles:
        if not 0 < p <= 100:
            raise ValueError(f"percentiles must be in (0, 100], got {p}")
        rank = max(1, math.ceil(p / 100.0 * len(values)))
        out.append(values[rank - 1])
    return out


def resolve_c_inf(subgroups: Sequence[Subgroup]) -> float:
    """Default price of no recourse: twice the largest finite action cost."""
    worst = 0.0
    for sub in subgroups:
        for act in sub.actions:
            if act.cost != INFINITE:
                worst = max(worst, act.cost)
    return 2.0 * worst if worst > 0.0 else 1.0


def rank_subgroups(
    definition: DefinitionSpec, scored: Sequence[tuple[Subgroup, MetricOutcome]]
) -> RankedList:
    """Competition-rank subgroups by unfairness, FAIR entries last, unranked."""
    unfair = [(s, o) for s, o in scored if not o.fair]
    fair = [(s, o) for s, o in scored if o.fair]
    unfair.sort(key=lambda so: (-_rank_value(so[1].unfairness), so[0].predicate.sort_key()))
    fair.sort(key=lambda so: so[0].predicate.sort_key())
    entries = []
    previous_value, previous_rank = None, 0
    for i, (sub, outcome) in enumerate(unfair):
        value = _rank_value(outcome.unfairness)
        rank = previous_rank if value == previous_value else i + 1
        entries.append(RankedEntry(sub, outcome, rank))
        previous_value, previous_rank = value, rank
    entries += [RankedEntry(sub, outcome, None) for sub, outcome in fair]
    return RankedList(definition, tuple(entries))


def _rank_value(unfairness) -> float:
    return float(unfairness)


def ranking_analysis(rankings: Sequence[RankedList]) -> list[dict]:
    """Per definition: size of the most-unfair tie, and bias directions in the
    top decile (of all subgroups, FAIR entries excluded from the candidates)."""
    rows = []
    for ranked in rankings:
        entries = ranked.entries
        unfair = [e for e in entries if e.rank is not None]
        top = math.ceil(0.10 * len(entries))
        head = unfair[: min(top, len(unfair))]
        rows.append(
            {
                "definition": ranked.definition,
                "rank_one_count": sum(1 for e in unfair if e.rank == 1),
                "top_count": len(head),
                "bias_against_0": sum(1 for e in head if e.outcome.bias_against == 0),
                "bias_against_1": sum(1 for e in head if e.outcome.bias_against == 1),
            }
        )
    return rows


def aggregated_rankings(rankings: Sequence[RankedList]) -> list[list[float | None]]:
    """Cross-definition matrix: how definition i's most-unfair subgroups rank
    under definition j, averaged and divided by j's largest rank tier.

    FAIR entries take the rank position after the last unfair tier.  Cells on
    the diagonal, and rows whose definition found no unfair subgroup, are None.
    """
    agg_rank: list[dict] = []
    max_tier: list[int] = []
    rank_one: list[list] = []
    for ranked in rankings:
        unfair = [e for e in ranked.entries if e.rank is not None]
        fair_position = len(unfair) + 1
        ranks = {e.subgroup.predicate: (e.rank if e.rank is not None else fair_position) for e in ranked.entries}
        agg_rank.append(ranks)
        has_fair = len(unfair) < len(ranked.entries)
        max_tier.append(fair_position if has_fair else (unfair[-1].rank if unfair else 1))
        rank_one.append([e.subgroup.predicate for e in unfair if e.rank == 1])

    n = len(rankings)
    matrix: list[list[float | None]] = []
    for i in range(n):
        row: list[float | None] = []
        for j in range(n):
            if i == j or not rank_one[i]:
                row.append(None)
            else:
                mean = sum(agg_rank[j][p] for p in rank_one[i]) / len(rank_one[i])
                row.append(mean / max_tier[j])
        matrix.append(row)
    return matrix


def run_audit(dataset: Dataset, predictor, config: AuditConfig, source: dict | None = None) -> AuditReport:
    """Execute the full audit pipeline and assemble the report."""
    split = split_affected(dataset, predictor)
    seeds = generate_subgroups(dataset, split, config.min_support)
    affected_set = set(split.affected)
    unaffected = tuple(i for i in range(len(dataset.rows)) if i not in affected_set)
    action_support = (
        config.action_min_support if config.action_min_support is not None else config.min_support
    )
    actions = generate_actions(dataset, unaffected, action_support)
    subgroups, stats = evaluate_subgroups(
        dataset, split, predictor, seeds, actions, workers=config.workers
    )

    budgets_used: tuple[float, ...] = ()
    budget_note = ""
    definitions = config.definitions
    if definitions is None:
        if config.budgets is not None:
            budgets_used = tuple(config.budgets)
            budget_note = "configured"
        else:
            budgets_used = tuple(derive_budgets(subgroups, config.budget_percentiles))
            budget_note = "derived from percentiles " + ", ".join(
                format_value(float(p)) for p in config.budget_percentiles
            )
        definitions = default_battery(budgets_used, alpha=config.alpha)
    ids = [d.id for d in definitions]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate definitions configured: {sorted(ids)}")

    if config.c_inf is not None:
        c_inf_used, c_inf_note = config.c_inf, "configured"
    else:
        c_inf_used = resolve_c_inf(subgroups)
        c_inf_note = "2 x the largest finite action cost observed"

    def score_one(sub: Subgroup) -> list[MetricOutcome]:
        return [definition.evaluate(sub, c_inf_used) for definition in definitions]

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            outcome_rows = list(pool.map(score_one, subgroups, chunksize=64))
    else:
        outcome_rows = [score_one(sub) for sub in subgroups]

    rankings = tuple(
        rank_subgroups(definition, [(sub, row[k]) for sub, row in zip(subgroups, outcome_rows)])
        for k, definition in enumerate(definitions)
    )

    summary = {
        "source": source or {},
        "rows": len(dataset.rows),
        "rows_dropped_at_load": dataset.n_dropped,
        "affected": len(split.affected),
        "affected_side0": len(split.side0),
        "affected_side1": len(split.side1),
        "unaffected": len(unaffected),
        "min_support": config.min_support,
        "action_min_support": action_support,
        "actions_mined": len(actions),
        "subgroups_mined": len(seeds),
        "subgroups_audited": len(subgroups),
        "excluded_empty_side": stats["excluded_empty_side"],
        "infeasible_pairs": stats["infeasible_pairs"],
        "budgets": list(budgets_used),
        "budget_note": budget_note,
        "c_inf": c_inf_used,
        "c_inf_note": c_inf_note,
        "alpha": config.alpha,
    }
    return AuditReport(
        protected=dataset.protected,
        protected_labels=dataset.protected_values,
        definitions=tuple(definitions),
        subgroups=tuple(subgroups),
        rankings=rankings,
        analysis=ranking_analysis(rankings),
        aggregation=aggregated_rankings(rankings),
        summary=summary,
    )


def display_actions(sub: Subgroup, definition: DefinitionSpec) -> tuple[list, list]:
    """Per-side actions a comparative summary should show for a definition.

    Threshold metrics show the actions qualifying per side; budget metrics
    show the in-budget actions; everything else shows all feasible actions.
    Sorted by that side's effectiveness, best first.
    """
    finite = sub.finite_actions()
    per_side = []
    for side in (0, 1):
        size = sub.size(side)
        if definition.metric in ("equal_choice", "cost_of_effectiveness"):
            chosen = [a for a in finite if effectiveness(a, side, size) >= definition.phi]
        elif definition.metric == "effectiveness_within_budget":
            chosen = [a for a in finite if a.cost <= definition.budget]
        else:
            chosen = list(finite)
        chosen.sort(key=lambda a: (-effectiveness(a, side, size), a.action.sort_key()))
        per_side.append(chosen)
    return per_side[0], per_side[1]


def format_score(value) -> str:
    """Score text: integers plainly, infinities as 'inf', reals trimmed."""
    if value == INFINITE or value == "inf":
        return "inf"
    if isinstance(value, int) or (isinstance(value, float) and value.is_integer()):
        return str(int(value))
    return f"{value:.6g}"


def render_csc(
    predicate_text: str,
    sides: Sequence[tuple[str, Sequence[tuple[str, float, float]]]],
    definition_display: str,
    fair: bool,
    bias_label: str | None,
    unfairness,
) -> str:
    """Comparative subgroup summary from plain values.

    ``sides`` holds (label, rows) in print order, each row being
    (action text, cost, effectiveness).
    """
    lines = [f"If {predicate_text}:"]
    for label, rows in sides:
        costs = [cost for _, cost, _ in rows]
        mean_text = f"{sum(costs) / len(costs):.2f}" if costs else "-"
        lines.append(f"    Protected Subgroup = '{label}', mean action cost = {mean_text}")
        if not rows:
            lines.append("        No recourses for this subgroup.")
        for text, _, eff in rows:
            lines.append(f"        Make {text} with effectiveness {eff * 100.0:.2f}%")
    if fair:
        lines.append(f"    Fair under {definition_display}.")
    else:
        lines.append(
            f"    Bias against '{bias_label}' due to {definition_display}. "
            f"Unfairness score = {format_score(unfairness)}."
        )
    return "\n".join(lines)


def format_csc(
    sub: Subgroup,
    definition: DefinitionSpec,
    outcome: MetricOutcome,
    protected_labels: tuple[str, str],
) -> str:
    """Comparative subgroup summary for one evaluated subgroup."""
    shown0, shown1 = display_actions(sub, definition)
    sides = []
    for side, shown in ((1, shown1), (0, shown0)):
        rows = [
            (act.action.describe(), act.cost, effectiveness(act, side, sub.size(side)))
            for act in shown
        ]
        sides.append((protected_labels[side], rows))
    bias_label = None if outcome.fair else protected_labels[outcome.bias_against]
    return render_csc(
        sub.predicate.describe(), sides, definition.display, outcome.fair, bias_label, outcome.unfairness
    )
