"""Frequent-itemset mining and subgroup/action generation.

The miner is a from-scratch FP-growth over arbitrary hashable items.  An
itemset is frequent when ``count / n_transactions >= min_support`` in float
arithmetic; results carry exact counts.  Subgroup predicates are itemsets
frequent among the affected rows of *both* protected sides (the protected
feature itself is never mined); candidate actions are itemsets frequent among
unaffected rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Collection, Iterable, Sequence

from .actions import Action, value_sort_key
from .schema import AffectedSplit, Dataset, Value, format_value


@dataclass(frozen=True)
class ItemsetResult:
    """A frequent itemset with its exact transaction count and support."""

    items: frozenset
    count: int
    support: float


@dataclass(frozen=True)
class Predicate:
    """A conjunction of feature=value conditions, canonically ordered."""

    items: tuple[tuple[str, Value], ...]

    @classmethod
    def make(cls, pairs: Iterable[tuple[str, Value]]) -> "Predicate":
        pairs = sorted(pairs, key=lambda p: p[0])
        names = [f for f, _ in pairs]
        if len(set(names)) != len(names):
            raise ValueError(f"predicate repeats a feature: {names}")
        if not pairs:
            raise ValueError("predicate must contain at least one condition")
        return cls(tuple(pairs))

    @property
    def features(self) -> tuple[str, ...]:
        return tuple(f for f, _ in self.items)

    def value(self, feature: str) -> Value:
        for f, v in self.items:
            if f == feature:
                return v
        raise KeyError(feature)

    def values(self) -> dict[str, Value]:
        return dict(self.items)

    def satisfies(self, row: tuple, dataset: Dataset) -> bool:
        return all(row[dataset.feature_index(f)] == v for f, v in self.items)

    def sort_key(self) -> tuple:
        return tuple((f, value_sort_key(v)) for f, v in self.items)

    def describe(self) -> str:
        return ",".join(f"{f}={format_value(v)}" for f, v in self.items)


@dataclass(frozen=True)
class SubgroupSeed:
    """A mined subgroup predicate with per-side affected coverage."""

    predicate: Predicate
    coverage0: float
    coverage1: float


def fpgrowth(transactions: Sequence[Collection], min_support: float) -> list[ItemsetResult]:
    """All itemsets with support >= min_support, by FP-growth.

    Args:
        transactions: item collections; items may be any hashable values.
        min_support: frequency threshold in (0, 1].

    Returns:
        Frequent itemsets with exact counts, in a deterministic canonical
        order (itemset size, then item text).
    """
    if not 0.0 < min_support <= 1.0:
        raise ValueError(f"min_support must be in (0, 1], got {min_support}")
    n = len(transactions)
    if n == 0:
        return []
    min_count = _min_count(min_support, n)

    counts: dict = {}
    for t in transactions:
        for item in t:
            counts[item] = counts.get(item, 0) + 1
    counts = {item: c for item, c in counts.items() if c >= min_count}

    rank = _frequency_rank(counts)
    weighted = []
    for t in transactions:
        kept = sorted((item for item in set(t) if item in counts), key=rank.__getitem__)
        if kept:
            weighted.append((kept, 1))

    results: dict[frozenset, int] = {}
    _mine(weighted, counts, min_count, frozenset(), results)
    ordered = sorted(results.items(), key=lambda kv: _itemset_key(kv[0]))
    return [ItemsetResult(items, count, count / n) for items, count in ordered]


def _min_count(min_support: float, n: int) -> int:
    """Smallest integer count c with c / n >= min_support (float comparison)."""
    c = max(1, math.ceil(min_support * n))
    while c > 1 and (c - 1) / n >= min_support:
        c -= 1
    while c <= n and c / n < min_support:
        c += 1
    return c


def _frequency_rank(counts: dict) -> dict:
    ordered = sorted(counts, key=lambda item: (-counts[item], repr(item)))
    return {item: i for i, item in enumerate(ordered)}


class _Node:
    __slots__ = ("item", "count", "parent", "children")

    def __init__(self, item, parent):
        self.item = item
        self.count = 0
        self.parent = parent
        self.children = {}


def _build_tree(weighted):
    root = _Node(None, None)
    header: dict = {}
    for items, weight in weighted:
        node = root
        for item in items:
            child = node.children.get(item)
            if child is None:
                child = _Node(item, node)
                node.children[item] = child
                header.setdefault(item, []).append(child)
            child.count += weight
            node = child
    return header


def _mine(weighted, counts, min_count, suffix, results):
    header = _build_tree(weighted)
    # Least frequent first: each item's conditional base only contains more
    # frequent items, so every itemset is emitted exactly once.
    for item in sorted(header, key=lambda it: (counts[it], repr(it))):
        itemset = suffix | {item}
        results[itemset] = counts[item]

        base = []
        for node in header[item]:
            path = []
            parent = node.parent
            while parent.item is not None:
                path.append(parent.item)
                parent = parent.parent
            if path:
                path.reverse()
                base.append((path, node.count))
        if not base:
            continue

        cond_counts: dict = {}
        for path, weight in base:
            for it in path:
                cond_counts[it] = cond_counts.get(it, 0) + weight
        cond_counts = {it: c for it, c in cond_counts.items() if c >= min_count}
        if not cond_counts:
            continue
        cond_rank = _frequency_rank(cond_counts)
        filtered = []
        for path, weight in base:
            kept = sorted((it for it in path if it in cond_counts), key=cond_rank.__getitem__)
            if kept:
                filtered.append((kept, weight))
        _mine(filtered, cond_counts, min_count, itemset, results)


def _itemset_key(items: frozenset) -> tuple:
    return (len(items), tuple(sorted(repr(item) for item in items)))


def row_items(dataset: Dataset, row_index: int, exclude: str) -> set:
    """A row's full item set, one (feature, value) item per feature."""
    row = dataset.rows[row_index]
    return {
        (feat.name, row[i])
        for i, feat in enumerate(dataset.schema)
        if feat.name != exclude
    }


def generate_subgroups(
    dataset: Dataset, split: AffectedSplit, min_support: float
) -> list[SubgroupSeed]:
    """Mine predicates frequent among affected rows of both protected sides.

    Each side of the affected population is mined separately with the
    protected feature excluded; only predicates frequent on both sides
    survive.  Coverage per side is the predicate's support in that side.
    """
    frequents = []
    for members in (split.side0, split.side1):
        transactions = [row_items(dataset, r, dataset.protected) for r in members]
        frequents.append({r.items: r.support for r in fpgrowth(transactions, min_support)})
    common = set(frequents[0]) & set(frequents[1])
    seeds = [
        SubgroupSeed(Predicate.make(items), frequents[0][items], frequents[1][items])
        for items in common
    ]
    seeds.sort(key=lambda s: s.predicate.sort_key())
    return seeds


def generate_actions(
    dataset: Dataset, unaffected: Sequence[int], min_support: float
) -> list[Action]:
    """Mine candidate actions from the unaffected population.

    Every itemset frequent among unaffected rows becomes an action assigning
    those feature values; the protected feature is never assigned.
    """
    transactions = [row_items(dataset, r, dataset.protected) for r in unaffected]
    results = fpgrowth(transactions, min_support)
    actions = [Action.make(r.items) for r in results]
    actions.sort(key=lambda a: a.sort_key())
    return actions


def valid_actions(predicate: Predicate, actions: Iterable[Action]) -> list[Action]:
    """Actions applicable to a subgroup: features within the predicate, at
    least one assigned value differing from the predicate's."""
    values = predicate.values()
    out = []
    for action in actions:
        if all(f in values for f in action.features) and any(
            values[f] != v for f, v in action.assignments
        ):
            out.append(action)
    return out
