"""Recourse actions: application, feasibility, and cost.

An action assigns new values to a set of features.  Its cost from a given
source assignment is the weighted sum of per-feature change costs: normalized
absolute difference for numerical features, rank distance for ordinal ones,
and one unit for a changed categorical value.  Infeasible actions (lowering a
non-decreasing feature, or assigning a forbidden target) cost ``INFINITE``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

from .schema import Dataset, FeatureSchema, SchemaError, Value, format_value

INFINITE = math.inf


def value_sort_key(value: Value) -> tuple:
    """Total order over mixed string/float values for canonical layouts."""
    return (0, "", value) if isinstance(value, (int, float)) else (1, value, 0.0)


@dataclass(frozen=True)
class Action:
    """An assignment of target values to features, canonically ordered."""

    assignments: tuple[tuple[str, Value], ...]

    @classmethod
    def make(cls, pairs: Iterable[tuple[str, Value]]) -> "Action":
        pairs = sorted(pairs, key=lambda p: p[0])
        names = [f for f, _ in pairs]
        if len(set(names)) != len(names):
            raise ValueError(f"action assigns a feature twice: {names}")
        if not pairs:
            raise ValueError("action must assign at least one feature")
        return cls(tuple(pairs))

    @property
    def features(self) -> tuple[str, ...]:
        return tuple(f for f, _ in self.assignments)

    def value(self, feature: str) -> Value:
        for f, v in self.assignments:
            if f == feature:
                return v
        raise KeyError(feature)

    def sort_key(self) -> tuple:
        return tuple((f, value_sort_key(v)) for f, v in self.assignments)

    def describe(self) -> str:
        return ",".join(f"{f}={format_value(v)}" for f, v in self.assignments)


def apply_action(action: Action, row: tuple, dataset: Dataset) -> tuple:
    """Counterfactual row: assigned features replaced, everything else kept."""
    new = list(row)
    for feature, target in action.assignments:
        feat = dataset.feature(feature)
        if not feat.contains(target):
            raise SchemaError(
                f"action target {target!r} outside domain of feature {feature!r}"
            )
        new[dataset.feature_index(feature)] = target
    return tuple(new)


def is_feasible(action: Action, source: Mapping[str, Value], dataset: Dataset) -> bool:
    """Whether an action is allowed from the given source values.

    ``source`` must cover every assigned feature.  An action is infeasible if
    it lowers a non-decreasing feature (rank order for ordinals, magnitude for
    numericals) or assigns any forbidden target value.
    """
    for feature, target in action.assignments:
        feat = dataset.feature(feature)
        if target in feat.forbidden_targets:
            return False
        if feat.monotone == "non-decreasing":
            current = source[feature]
            if feat.kind == "numerical":
                if target < current:
                    return False
            elif feat.position(target) < feat.position(current):
                return False
    return True


def action_cost(action: Action, source: Mapping[str, Value], dataset: Dataset) -> float:
    """Cost of an action from the given source values, ``INFINITE`` if infeasible.

    Every individual matching a subgroup predicate shares the predicate's
    values on the action's features, so this is also the per-subgroup cost.
    """
    model = CostModel(dataset)
    return model.cost(action, source)


class CostModel:
    """Per-feature change costs with dataset-wide numerical normalization.

    Numerical differences are scaled by the observed min-max span of the full
    loaded dataset, not of any subgroup.
    """

    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        self._span = {}
        for i, feat in enumerate(dataset.schema):
            if feat.kind != "numerical":
                continue
            column = [row[i] for row in dataset.rows]
            lo, hi = (min(column), max(column)) if column else feat.domain
            self._span[feat.name] = (lo, hi - lo if hi > lo else 0.0)

    def normalize(self, feature: str, value: float) -> float:
        lo, span = self._span[feature]
        return (value - lo) / span if span else 0.0

    def pair_cost(self, feat: FeatureSchema, source: Value, target: Value) -> float:
        """Weighted cost of moving one feature from source to target."""
        if target in feat.forbidden_targets:
            return INFINITE
        if target == source:
            return 0.0
        if feat.kind == "numerical":
            if feat.monotone == "non-decreasing" and target < source:
                return INFINITE
            base = abs(self.normalize(feat.name, target) - self.normalize(feat.name, source))
        elif feat.kind == "ordinal":
            if feat.monotone == "non-decreasing" and feat.position(target) < feat.position(source):
                return INFINITE
            base = float(abs(feat.position(target) - feat.position(source)))
        else:
            base = 1.0
        return feat.weight * base

    def cost(self, action: Action, source: Mapping[str, Value]) -> float:
        """Total action cost: per-feature costs summed in canonical order."""
        total = 0.0
        for feature, target in action.assignments:
            part = self.pair_cost(self.dataset.feature(feature), source[feature], target)
            if part == INFINITE:
                return INFINITE
            total += part
        return total
