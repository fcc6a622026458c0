"""Feature schemas, delimited dataset loading, binning, and affected splits.

A dataset is a header-bearing delimited text file whose columns are described
by a schema document.  Categorical and ordinal values stay strings, numerical
values are parsed to floats.  The protected feature is a two-valued
categorical feature singled out by name; its first declared domain value is
protected side 0, the second side 1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

Value = str | float
Row = tuple[Value, ...]

KINDS = ("categorical", "ordinal", "numerical")
MONOTONE = ("free", "non-decreasing")

DEFAULT_MISSING = ("", "?")


class SchemaError(ValueError):
    """A schema document or feature description is invalid."""


class DatasetError(ValueError):
    """A data file does not conform to its schema."""


@dataclass(frozen=True)
class FeatureSchema:
    """Description of one dataset column.

    Args:
        name: column name as it appears in the data header.
        kind: one of ``categorical``, ``ordinal``, ``numerical``.
        domain: allowed values.  For categorical/ordinal features a tuple of
            distinct strings; for numerical features the inclusive pair
            ``(low, high)``.
        order: rank order of the domain, ordinal features only.  Defaults to
            the domain order.
        weight: non-negative multiplier applied to this feature's change cost.
        monotone: ``free`` or ``non-decreasing``.  Non-decreasing features may
            never be lowered by an action and must be ordinal or numerical.
        forbidden_targets: values an action may never assign to this feature.
    """

    name: str
    kind: str
    domain: tuple
    order: tuple | None = None
    weight: float = 1.0
    monotone: str = "free"
    forbidden_targets: frozenset = frozenset()

    def __post_init__(self):
        if not self.name:
            raise SchemaError("feature name must be non-empty")
        if self.kind not in KINDS:
            raise SchemaError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.monotone not in MONOTONE:
            raise SchemaError(
                f"feature {self.name!r}: unknown monotone mode {self.monotone!r}"
            )
        if not (isinstance(self.weight, (int, float)) and self.weight >= 0):
            raise SchemaError(f"feature {self.name!r}: weight must be non-negative")
        if self.kind == "numerical":
            self._check_numerical()
        else:
            self._check_discrete()
        bad = set(self.forbidden_targets) - self._target_space()
        if bad:
            raise SchemaError(
                f"feature {self.name!r}: forbidden targets outside domain: {sorted(map(str, bad))}"
            )

    def _check_numerical(self):
        if len(self.domain) != 2:
            raise SchemaError(
                f"feature {self.name!r}: numerical domain must be [low, high]"
            )
        lo, hi = self.domain
        if not all(isinstance(v, (int, float)) for v in (lo, hi)) or not lo <= hi:
            raise SchemaError(
                f"feature {self.name!r}: numerical domain must satisfy low <= high"
            )
        if self.order is not None:
            raise SchemaError(f"feature {self.name!r}: order applies to ordinal features only")

    def _check_discrete(self):
        if not self.domain:
            raise SchemaError(f"feature {self.name!r}: empty domain")
        if len(set(self.domain)) != len(self.domain):
            raise SchemaError(f"feature {self.name!r}: duplicate domain values")
        if not all(isinstance(v, str) for v in self.domain):
            raise SchemaError(
                f"feature {self.name!r}: categorical/ordinal values must be strings"
            )
        if self.order is not None:
            if self.kind != "ordinal":
                raise SchemaError(
                    f"feature {self.name!r}: order applies to ordinal features only"
                )
            if sorted(self.order) != sorted(self.domain):
                raise SchemaError(
                    f"feature {self.name!r}: order must be a permutation of the domain"
                )
        if self.monotone != "free" and self.kind == "categorical":
            raise SchemaError(
                f"feature {self.name!r}: categorical features cannot be monotone"
            )

    def _target_space(self) -> set:
        if self.kind == "numerical":
            return set(self.forbidden_targets)  # any numeric value is a legal ban
        return set(self.domain)

    @property
    def ranking(self) -> tuple:
        """Domain values in rank order (ordinal features)."""
        return self.order if self.order is not None else self.domain

    def position(self, value) -> int:
        """Rank position of an ordinal value."""
        try:
            return self.ranking.index(value)
        except ValueError:
            raise SchemaError(f"feature {self.name!r}: value {value!r} not in domain") from None

    def index(self, value) -> int:
        """Domain index of a categorical/ordinal value."""
        try:
            return self.domain.index(value)
        except ValueError:
            raise SchemaError(f"feature {self.name!r}: value {value!r} not in domain") from None

    def contains(self, value) -> bool:
        if self.kind == "numerical":
            lo, hi = self.domain
            return isinstance(value, (int, float)) and lo <= value <= hi
        return value in self.domain


class Dataset:
    """Immutable loaded dataset: a schema, a protected feature, and rows.

    Rows are tuples aligned with the schema order.  Equality compares schema,
    protected feature, and rows; load metadata (dropped-row count) is ignored.
    """

    def __init__(
        self,
        schema: Sequence[FeatureSchema],
        protected: str,
        rows: Sequence[Row],
        n_dropped: int = 0,
    ):
        self.schema = tuple(schema)
        self.protected = protected
        self.rows = tuple(tuple(r) for r in rows)
        self.n_dropped = n_dropped
        names = [f.name for f in self.schema]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate feature names in schema")
        self._index = {n: i for i, n in enumerate(names)}
        if protected not in self._index:
            raise SchemaError(f"protected feature {protected!r} not in schema")
        prot = self.feature(protected)
        if prot.kind != "categorical" or len(prot.domain) != 2:
            raise SchemaError(
                f"protected feature {protected!r} must be categorical with exactly two values"
            )
        self._validate_rows()

    def _validate_rows(self):
        for i, row in enumerate(self.rows):
            if len(row) != len(self.schema):
                raise DatasetError(f"row {i}: expected {len(self.schema)} values, got {len(row)}")
            for feat, value in zip(self.schema, row):
                if not feat.contains(value):
                    raise DatasetError(
                        f"row {i}: value {value!r} outside domain of feature {feat.name!r}"
                    )

    def __eq__(self, other):
        return (
            isinstance(other, Dataset)
            and self.schema == other.schema
            and self.protected == other.protected
            and self.rows == other.rows
        )

    def __len__(self):
        return len(self.rows)

    def feature(self, name: str) -> FeatureSchema:
        try:
            return self.schema[self._index[name]]
        except KeyError:
            raise SchemaError(f"unknown feature {name!r}") from None

    def feature_index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise SchemaError(f"unknown feature {name!r}") from None

    @property
    def protected_index(self) -> int:
        return self._index[self.protected]

    @property
    def protected_values(self) -> tuple:
        """The two protected values, side 0 first."""
        return self.feature(self.protected).domain

    def side(self, row_index: int) -> int:
        """Protected side (0 or 1) of a row."""
        return self.protected_values.index(self.rows[row_index][self.protected_index])

    def value(self, row_index: int, name: str) -> Value:
        return self.rows[row_index][self._index[name]]


@dataclass(frozen=True)
class AffectedSplit:
    """Row indices of the affected population, overall and per protected side."""

    affected: tuple[int, ...]
    side0: tuple[int, ...]
    side1: tuple[int, ...]

    def group(self, side: int) -> tuple[int, ...]:
        return self.side0 if side == 0 else self.side1


@dataclass(frozen=True)
class SchemaSpec:
    """Parsed schema document: features plus loader directives."""

    features: tuple[FeatureSchema, ...]
    protected: str
    drop: frozenset = frozenset()
    label: tuple[str, str] | None = None  # (column, favorable value)
    missing: tuple[str, ...] = DEFAULT_MISSING
    bins: Mapping[str, tuple] = field(default_factory=dict)


_FEATURE_KEYS = {"kind", "domain", "order", "weight", "monotone", "forbidden_targets"}
_TOP_KEYS = {"features", "protected", "drop", "label", "missing", "bins"}


def parse_schema(doc: Mapping) -> SchemaSpec:
    """Build a SchemaSpec from a parsed schema document (mapping).

    The document maps ``features`` to an ordered name -> description mapping
    and names the ``protected`` feature.  Optional keys: ``drop`` (columns to
    ignore), ``label`` (``{column, favorable}`` for training), ``missing``
    (tokens treated as missing values), ``bins`` (feature -> bin edges applied
    after loading).
    """
    if not isinstance(doc, Mapping):
        raise SchemaError("schema document must be a mapping")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise SchemaError(f"unknown schema keys: {sorted(unknown)}")
    raw = doc.get("features")
    if not isinstance(raw, Mapping) or not raw:
        raise SchemaError("features: must be a non-empty mapping")
    features = tuple(_parse_feature(name, spec) for name, spec in raw.items())
    protected = doc.get("protected")
    if not isinstance(protected, str):
        raise SchemaError("protected: feature name required")

    drop = doc.get("drop", [])
    if not isinstance(drop, (list, tuple)) or not all(isinstance(c, str) for c in drop):
        raise SchemaError("drop: must be a list of column names")

    label = None
    if doc.get("label") is not None:
        ldoc = doc["label"]
        if not isinstance(ldoc, Mapping) or set(ldoc) != {"column", "favorable"}:
            raise SchemaError("label: must be a mapping with keys column, favorable")
        label = (str(ldoc["column"]), str(ldoc["favorable"]))

    missing = doc.get("missing", list(DEFAULT_MISSING))
    if not isinstance(missing, (list, tuple)) or not all(isinstance(m, str) for m in missing):
        raise SchemaError("missing: must be a list of strings")

    bins = {}
    for name, edges in (doc.get("bins") or {}).items():
        if not any(f.name == name for f in features):
            raise SchemaError(f"bins.{name}: unknown feature")
        if not isinstance(edges, (list, tuple)) or len(edges) < 2:
            raise SchemaError(f"bins.{name}: needs at least two edges")
        bins[name] = tuple(edges)

    return SchemaSpec(
        features=features,
        protected=protected,
        drop=frozenset(drop),
        label=label,
        missing=tuple(missing),
        bins=bins,
    )


def _parse_feature(name: str, spec) -> FeatureSchema:
    if not isinstance(spec, Mapping):
        raise SchemaError(f"features.{name}: must be a mapping")
    unknown = set(spec) - _FEATURE_KEYS
    if unknown:
        raise SchemaError(f"features.{name}: unknown keys {sorted(unknown)}")
    kind = spec.get("kind")
    if kind not in KINDS:
        raise SchemaError(f"features.{name}.kind: expected one of {KINDS}, got {kind!r}")
    domain = spec.get("domain")
    if not isinstance(domain, (list, tuple)):
        raise SchemaError(f"features.{name}.domain: must be a list")
    if kind == "numerical":
        domain = tuple(float(v) for v in domain)
    else:
        domain = tuple(str(v) for v in domain)
    order = spec.get("order")
    if order is not None:
        order = tuple(str(v) for v in order)
    forbidden = spec.get("forbidden_targets", [])
    if not isinstance(forbidden, (list, tuple)):
        raise SchemaError(f"features.{name}.forbidden_targets: must be a list")
    if kind == "numerical":
        forbidden = frozenset(float(v) for v in forbidden)
    else:
        forbidden = frozenset(str(v) for v in forbidden)
    try:
        return FeatureSchema(
            name=name,
            kind=kind,
            domain=domain,
            order=order,
            weight=float(spec.get("weight", 1.0)),
            monotone=spec.get("monotone", "free"),
            forbidden_targets=forbidden,
        )
    except SchemaError:
        raise
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"features.{name}: {exc}") from None


def load_schema_file(path) -> SchemaSpec:
    """Parse a YAML/JSON schema document from disk."""
    import yaml

    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    return parse_schema(doc)


def load_dataset(path, spec: SchemaSpec, delimiter: str = ",") -> Dataset:
    """Load a delimited file with a header row against a schema.

    Rows containing a missing token in any schema column are dropped and
    counted, unless the token is itself a declared domain value of that
    column's feature.
    """
    dataset, _ = _load(path, spec, delimiter)
    return dataset


def load_labeled_dataset(path, spec: SchemaSpec, delimiter: str = ",") -> tuple[Dataset, tuple[int, ...]]:
    """Load a dataset together with per-row labels in {-1, +1}.

    Requires the schema document to declare a ``label`` column; rows whose
    label column equals the favorable value get +1, all others -1.
    """
    if spec.label is None:
        raise SchemaError("schema declares no label column")
    dataset, labels = _load(path, spec, delimiter)
    return dataset, labels


def _load(path, spec: SchemaSpec, delimiter: str):
    missing = set(spec.missing)
    label_col = spec.label[0] if spec.label else None
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        if len(set(header)) != len(header):
            raise DatasetError(f"{path}: duplicate column names in header")
        known = {f.name for f in spec.features} | spec.drop | ({label_col} if label_col else set())
        for col in header:
            if col not in known:
                raise DatasetError(f"{path}: unknown column {col!r}")
        positions = {}
        for feat in spec.features:
            if feat.name not in header:
                raise DatasetError(f"{path}: missing column {feat.name!r}")
            positions[feat.name] = header.index(feat.name)
        label_pos = header.index(label_col) if label_col and label_col in header else None
        if label_col and label_pos is None:
            raise DatasetError(f"{path}: missing label column {label_col!r}")

        rows, labels, n_dropped = [], [], 0
        for lineno, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(header):
                raise DatasetError(f"{path}:{lineno}: expected {len(header)} fields")
            cells = [c.strip() for c in record]
            row, drop = [], False
            for feat in spec.features:
                text = cells[positions[feat.name]]
                if text in missing and text not in feat.domain:
                    drop = True
                    break
                row.append(_parse_value(feat, text, path, lineno))
            if drop:
                n_dropped += 1
                continue
            rows.append(tuple(row))
            if label_pos is not None:
                labels.append(1 if cells[label_pos] == spec.label[1] else -1)

    dataset = Dataset(spec.features, spec.protected, rows, n_dropped=n_dropped)
    return dataset, tuple(labels)


def _parse_value(feat: FeatureSchema, text: str, path, lineno: int) -> Value:
    if feat.kind == "numerical":
        try:
            value = float(text)
        except ValueError:
            raise DatasetError(
                f"{path}:{lineno}: feature {feat.name!r}: not a number: {text!r}"
            ) from None
    else:
        value = text
    if not feat.contains(value):
        raise DatasetError(
            f"{path}:{lineno}: value {text!r} outside domain of feature {feat.name!r}"
        )
    return value


def write_dataset(dataset: Dataset, path, delimiter: str = ","):
    """Serialize a dataset back to a delimited file (round-trips exactly)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow([f.name for f in dataset.schema])
        for row in dataset.rows:
            writer.writerow([format_value(v) for v in row])


def format_value(value: Value) -> str:
    """Canonical text for a cell value; float text round-trips exactly."""
    if isinstance(value, float):
        return str(int(value)) if value.is_integer() else repr(value)
    return str(value)


def bin_numeric(dataset: Dataset, feature: str, edges: Sequence[float]) -> Dataset:
    """Discretize a numerical feature into half-open interval bins.

    Bins are ``(edges[i], edges[i+1]]`` labelled with the literal edge text,
    e.g. ``(17, 41]``; the lowest edge itself falls into the first bin.  The
    feature becomes ordinal in bin order; weight and monotonicity carry over.
    Returns a new dataset, the input is unchanged.
    """
    feat = dataset.feature(feature)
    if feat.kind != "numerical":
        raise SchemaError(f"feature {feature!r} is {feat.kind}, expected numerical")
    edges = list(edges)
    if len(edges) < 2 or any(a >= b for a, b in zip(edges, edges[1:])):
        raise SchemaError(f"feature {feature!r}: bin edges must be strictly increasing")
    labels = tuple(f"({_edge_text(a)}, {_edge_text(b)}]" for a, b in zip(edges, edges[1:]))

    def to_bin(v: float) -> str:
        if v < edges[0] or v > edges[-1]:
            raise DatasetError(
                f"feature {feature!r}: value {v!r} outside bin range [{edges[0]}, {edges[-1]}]"
            )
        if v == edges[0]:
            return labels[0]
        for j in range(len(labels)):
            if v <= edges[j + 1]:
                return labels[j]
        raise AssertionError("unreachable")

    idx = dataset.feature_index(feature)
    new_feat = FeatureSchema(
        name=feat.name,
        kind="ordinal",
        domain=labels,
        weight=feat.weight,
        monotone=feat.monotone,
    )
    schema = list(dataset.schema)
    schema[idx] = new_feat
    rows = [tuple(to_bin(v) if i == idx else v for i, v in enumerate(row)) for row in dataset.rows]
    return Dataset(schema, dataset.protected, rows, n_dropped=dataset.n_dropped)


def _edge_text(edge) -> str:
    return repr(edge) if isinstance(edge, float) else str(edge)


def apply_bins(dataset: Dataset, bins: Mapping[str, Sequence[float]]) -> Dataset:
    """Apply every configured binning, in schema feature order."""
    for feat in dataset.schema:
        if feat.name in bins:
            dataset = bin_numeric(dataset, feat.name, bins[feat.name])
    return dataset


def split_affected(dataset: Dataset, predictor) -> AffectedSplit:
    """Partition rows the predictor labels -1 by protected side.

    Raises DatasetError if no row is affected.
    """
    from .model import BridgeError

    try:
        labels = predictor.predict_batch(dataset.rows)
    except BridgeError:
        raise
    except Exception as exc:
        raise DatasetError(f"predictor failed while labelling dataset: {exc}") from exc
    affected, side0, side1 = [], [], []
    for i, label in enumerate(labels):
        if label != -1:
            continue
        affected.append(i)
        if dataset.side(i) == 0:
            side0.append(i)
        else:
            side1.append(i)
    if not affected:
        raise DatasetError("empty affected population: the predictor labels every row +1")
    return AffectedSplit(tuple(affected), tuple(side0), tuple(side1))
