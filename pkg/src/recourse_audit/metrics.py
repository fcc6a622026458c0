"""Fairness-of-recourse metrics over evaluated subgroups.

Each metric compares the two protected sides of one subgroup and yields a
``MetricOutcome``: per-side scores, a non-negative unfairness value (the
absolute score difference, ``INFINITE`` when exactly one side is infinite),
and the side the difference works against.  Sides within ``1e-9`` of each
other (exactly equal, for counting metrics) are FAIR: unfairness 0, no bias.

Effectiveness-style scores (shares of a subgroup achieving recourse, counts
of usable actions) read "higher is better", so the bias falls on the lower
side; cost-style scores read "lower is better", so the bias falls on the
higher side.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from functools import lru_cache

from .actions import INFINITE, Action
from .mining import Predicate

FAIR_TOL = 1e-9


@lru_cache(maxsize=65536)
def _action_key(action: Action) -> tuple:
    # audits sort the same actions thousands of times across subgroups
    return action.sort_key()

VIEWPOINTS = ("micro", "macro")


@dataclass(frozen=True)
class EvaluatedAction:
    """A valid action with its subgroup cost and per-side flip sets.

    Flip sets hold dataset row indices whose counterfactual the classifier
    labels +1.  The cost is shared by every subgroup member because members
    agree with the predicate on all assigned features.
    """

    action: Action
    cost: float
    flipped0: frozenset[int]
    flipped1: frozenset[int]

    def flipped(self, side: int) -> frozenset[int]:
        return self.flipped0 if side == 0 else self.flipped1


@dataclass
class Subgroup:
    """A mined subgroup with per-side membership and evaluated actions."""

    predicate: Predicate
    members0: tuple[int, ...]
    members1: tuple[int, ...]
    coverage0: float
    coverage1: float
    actions: tuple[EvaluatedAction, ...] = ()
    _ecds: dict = field(default_factory=dict, repr=False, compare=False)

    def members(self, side: int) -> tuple[int, ...]:
        return self.members0 if side == 0 else self.members1

    def size(self, side: int) -> int:
        return len(self.members(side))

    def coverage(self, side: int) -> float:
        return self.coverage0 if side == 0 else self.coverage1

    def finite_actions(self) -> list[EvaluatedAction]:
        return [a for a in self.actions if a.cost != INFINITE]

    def ecd(self, side: int, viewpoint: str):
        """Per-side effectiveness-cost distribution, cached."""
        key = (side, viewpoint)
        if key not in self._ecds:
            self._ecds[key] = build_ecd(self.actions, side, self.size(side), viewpoint)
        return self._ecds[key]

    def swapped(self) -> "Subgroup":
        """The same subgroup with protected sides exchanged."""
        return Subgroup(
            predicate=self.predicate,
            members0=self.members1,
            members1=self.members0,
            coverage0=self.coverage1,
            coverage1=self.coverage0,
            actions=tuple(
                EvaluatedAction(a.action, a.cost, a.flipped1, a.flipped0) for a in self.actions
            ),
        )


@dataclass(frozen=True)
class EffCostDistribution:
    """Right-continuous step function: effectiveness reachable within a cost.

    Breakpoints are the distinct finite action costs in ascending order; the
    value below the first breakpoint is 0.
    """

    breakpoints: tuple[float, ...]
    values: tuple[float, ...]

    def at(self, cost: float) -> float:
        i = bisect.bisect_right(self.breakpoints, cost)
        return self.values[i - 1] if i else 0.0


@dataclass(frozen=True)
class MetricOutcome:
    """One metric's verdict on one subgroup."""

    score0: float
    score1: float
    unfairness: float
    fair: bool
    bias_against: int | None
    threshold: float | None = None
    within_confidence: bool | None = None


def effectiveness(action: EvaluatedAction, side: int, group_size: int) -> float:
    """Share of a protected side flipped by one action."""
    if group_size == 0:
        raise ValueError("effectiveness undefined for an empty protected side")
    return len(action.flipped(side)) / group_size


def aggregate_effectiveness(actions, side: int, group_size: int, viewpoint: str = "micro") -> float:
    """Combined effectiveness of an action set.

    Micro counts individuals flipped by at least one action; macro takes the
    best single action.
    """
    _check_viewpoint(viewpoint)
    if group_size == 0:
        raise ValueError("effectiveness undefined for an empty protected side")
    if viewpoint == "micro":
        flipped: set[int] = set()
        for action in actions:
            flipped |= action.flipped(side)
        return len(flipped) / group_size
    best = 0
    for action in actions:
        best = max(best, len(action.flipped(side)))
    return best / group_size


def build_ecd(actions, side: int, group_size: int, viewpoint: str = "micro") -> EffCostDistribution:
    """Effectiveness-cost distribution of a side; infinite costs never enter."""
    _check_viewpoint(viewpoint)
    if group_size == 0:
        raise ValueError("effectiveness undefined for an empty protected side")
    finite = sorted(
        (a for a in actions if a.cost != INFINITE),
        key=lambda a: (a.cost, _action_key(a.action)),
    )
    breakpoints, values = [], []
    covered: set[int] = set()
    best = 0
    for action in finite:
        covered |= action.flipped(side)
        best = max(best, len(action.flipped(side)))
        level = len(covered) if viewpoint == "micro" else best
        if breakpoints and breakpoints[-1] == action.cost:
            values[-1] = level / group_size
        else:
            breakpoints.append(action.cost)
            values.append(level / group_size)
    return EffCostDistribution(tuple(breakpoints), tuple(values))


def inverse_ecd(ecd: EffCostDistribution, phi: float) -> float:
    """Minimum cost at which effectiveness reaches phi; INFINITE if never."""
    if not 0.0 <= phi <= 1.0:
        raise ValueError(f"phi must be in [0, 1], got {phi}")
    if phi == 0.0:
        return 0.0
    for cost, value in zip(ecd.breakpoints, ecd.values):
        if value >= phi:
            return cost
    return INFINITE


def recourse_costs(sub: Subgroup, side: int) -> dict[int, float]:
    """Per-individual cost of recourse: cheapest finite action that flips them.

    Individuals no finite action flips are absent.
    """
    ordered = sorted(sub.finite_actions(), key=lambda a: (a.cost, _action_key(a.action)))
    costs: dict[int, float] = {}
    for action in ordered:
        for idx in action.flipped(side):
            costs.setdefault(idx, action.cost)
    return costs


def metric_equal_effectiveness(sub: Subgroup, viewpoint: str = "micro") -> MetricOutcome:
    """Compare the sides' aggregate effectiveness over all feasible actions."""
    finite = sub.finite_actions()
    s0 = aggregate_effectiveness(finite, 0, sub.size(0), viewpoint)
    s1 = aggregate_effectiveness(finite, 1, sub.size(1), viewpoint)
    return _lower_is_biased(s0, s1)


def metric_equal_choice(sub: Subgroup, phi: float) -> MetricOutcome:
    """Compare how many feasible actions reach effectiveness phi per side."""
    if not 0.0 <= phi <= 1.0:
        raise ValueError(f"phi must be in [0, 1], got {phi}")
    counts = []
    for side in (0, 1):
        size = sub.size(side)
        counts.append(
            sum(1 for a in sub.finite_actions() if effectiveness(a, side, size) >= phi)
        )
    return _lower_is_biased(counts[0], counts[1], counting=True)


def metric_effectiveness_within_budget(
    sub: Subgroup, budget: float, viewpoint: str = "micro"
) -> MetricOutcome:
    """Compare effectiveness reachable without exceeding a cost budget."""
    s0 = sub.ecd(0, viewpoint).at(budget)
    s1 = sub.ecd(1, viewpoint).at(budget)
    return _lower_is_biased(s0, s1)


def metric_cost_of_effectiveness(sub: Subgroup, phi: float, viewpoint: str = "micro") -> MetricOutcome:
    """Compare the minimum cost at which each side reaches effectiveness phi."""
    s0 = inverse_ecd(sub.ecd(0, viewpoint), phi)
    s1 = inverse_ecd(sub.ecd(1, viewpoint), phi)
    return _higher_is_biased(s0, s1)


def metric_fair_tradeoff(sub: Subgroup, alpha: float = 0.05, viewpoint: str = "micro") -> MetricOutcome:
    """Compare whole effectiveness-cost trade-offs by their largest gap.

    The unfairness is the two-sample Kolmogorov-Smirnov statistic between the
    sides' distributions, evaluated on the union of their breakpoints.  The
    outcome carries the confidence threshold for ``alpha`` and whether the
    statistic stays below it.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    ecd0 = sub.ecd(0, viewpoint)
    ecd1 = sub.ecd(1, viewpoint)
    grid = sorted({0.0} | set(ecd0.breakpoints) | set(ecd1.breakpoints))
    statistic, at0, at1 = 0.0, 0.0, 0.0
    for cost in grid:
        v0, v1 = ecd0.at(cost), ecd1.at(cost)
        gap = abs(v0 - v1)
        if gap > statistic:
            statistic, at0, at1 = gap, v0, v1
    n0, n1 = sub.size(0), sub.size(1)
    threshold = math.sqrt(-math.log(alpha / 2.0) * (n0 + n1) / (2.0 * n0 * n1))
    outcome = _lower_is_biased(at0, at1)
    return MetricOutcome(
        score0=at0,
        score1=at1,
        unfairness=outcome.unfairness,
        fair=outcome.fair,
        bias_against=outcome.bias_against,
        threshold=threshold,
        within_confidence=statistic < threshold,
    )


def metric_mean_recourse(sub: Subgroup, conditional: bool = True, c_inf: float | None = None) -> MetricOutcome:
    """Compare the sides' mean cost of recourse.

    Unconditional means price individuals without recourse at ``c_inf``;
    conditional means average only over individuals some action flips, so a
    side without any such individual has no defined mean (INFINITE unfairness
    against it, FAIR when both sides lack one).
    """
    if not conditional:
        if c_inf is None or not math.isfinite(c_inf):
            raise ValueError("unconditional mean recourse needs a finite c_inf")
    means = []
    for side in (0, 1):
        costs = recourse_costs(sub, side)
        if conditional:
            means.append(sum(costs.values()) / len(costs) if costs else INFINITE)
        else:
            total = sum(costs.get(idx, c_inf) for idx in sub.members(side))
            means.append(total / sub.size(side))
    return _higher_is_biased(means[0], means[1])


def _check_viewpoint(viewpoint: str):
    if viewpoint not in VIEWPOINTS:
        raise ValueError(f"viewpoint must be one of {VIEWPOINTS}, got {viewpoint!r}")


def _lower_is_biased(s0, s1, counting: bool = False) -> MetricOutcome:
    fair = s0 == s1 if counting else abs(s0 - s1) <= FAIR_TOL
    return MetricOutcome(
        score0=s0,
        score1=s1,
        unfairness=0 if fair else abs(s0 - s1),
        fair=fair,
        bias_against=None if fair else (0 if s0 < s1 else 1),
    )


def _higher_is_biased(s0, s1) -> MetricOutcome:
    if s0 == INFINITE and s1 == INFINITE:
        return MetricOutcome(s0, s1, 0, True, None)
    if s0 == INFINITE or s1 == INFINITE:
        return MetricOutcome(s0, s1, INFINITE, False, 0 if s0 == INFINITE else 1)
    fair = abs(s0 - s1) <= FAIR_TOL
    return MetricOutcome(
        score0=s0,
        score1=s1,
        unfairness=0 if fair else abs(s0 - s1),
        fair=fair,
        bias_against=None if fair else (0 if s0 > s1 else 1),
    )
