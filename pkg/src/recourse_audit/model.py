"""Predictors: builtin logistic model, rule tables, and the bridge client.

Every predictor maps instances (value tuples aligned with the dataset schema)
to labels in {-1, +1}; -1 is the unfavorable outcome.  ``predict_batch`` is
the canonical entry point and ``predict`` is its single-row form, so both
routes always agree bit for bit.
"""

from __future__ import annotations

import itertools
import json
import socket
import subprocess
import threading
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .schema import Dataset, FeatureSchema, format_value

WEIGHTS_FORMAT = "recourse-audit-logistic/1"

_RULE_TABLE_LIMIT = 500_000


class ModelError(ValueError):
    """A predictor cannot be built or cannot label an instance."""


class BridgeError(RuntimeError):
    """The external prediction bridge failed or broke protocol."""


class Predictor:
    """Interface shared by all predictor kinds."""

    def predict(self, row: tuple) -> int:
        return self.predict_batch([row])[0]

    def predict_batch(self, rows: Sequence[tuple]) -> list[int]:
        raise NotImplementedError


@dataclass(frozen=True)
class _TableTerm:
    """One-hot feature term: a weight per domain value."""

    name: str
    values: tuple[str, ...]
    weights: tuple[float, ...]

    def contribution(self, value) -> float:
        try:
            return self.weights[self.values.index(value)]
        except ValueError:
            raise ModelError(f"feature {self.name!r}: value {value!r} unknown to the model") from None


@dataclass(frozen=True)
class _ScaledTerm:
    """Min-max scaled numerical term: weight times the scaled value."""

    name: str
    weight: float
    low: float
    span: float

    def contribution(self, value) -> float:
        scaled = (value - self.low) / self.span if self.span else 0.0
        return self.weight * scaled


class LogisticPredictor(Predictor):
    """Linear model over one-hot/min-max encoded features.

    The decision score is the intercept plus one contribution per feature,
    accumulated in feature order; a score of exactly zero maps to +1.
    """

    def __init__(self, terms: Sequence, intercept: float, loss_trace: tuple[float, ...] = ()):
        self.terms = tuple(terms)
        self.intercept = float(intercept)
        self.loss_trace = tuple(loss_trace)

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.terms)

    def _check_width(self, row):
        if len(row) != len(self.terms):
            raise ModelError(f"expected {len(self.terms)} values per instance, got {len(row)}")

    def decision_scores(self, rows: Sequence[tuple]) -> np.ndarray:
        if rows:
            self._check_width(rows[0])
        total = np.full(len(rows), self.intercept, dtype=np.float64)
        for i, term in enumerate(self.terms):
            total += self.contribution_column(i, [row[i] for row in rows])
        return total

    def contribution_column(self, term_index: int, values: Sequence) -> np.ndarray:
        """Per-row score contribution of one feature."""
        term = self.terms[term_index]
        if isinstance(term, _ScaledTerm):
            column = np.asarray(values, dtype=np.float64)
            if term.span:
                return term.weight * ((column - term.low) / term.span)
            return np.zeros(len(column))
        lookup = {v: k for k, v in enumerate(term.values)}
        codes = np.fromiter(
            (lookup.get(v, -1) for v in values),
            dtype=np.intp,
            count=len(values),
        )
        if (codes < 0).any():
            bad = values[int(np.argmax(codes < 0))]
            raise ModelError(f"feature {term.name!r}: value {bad!r} unknown to the model")
        return np.asarray(term.weights, dtype=np.float64)[codes]

    def contribution_value(self, term_index: int, value) -> float:
        """Score contribution of one feature value (scalar)."""
        return self.terms[term_index].contribution(value)

    def scores_with_overrides(
        self, base: Sequence[np.ndarray], overrides: Mapping[int, float]
    ) -> np.ndarray:
        """Decision scores with some features' contributions replaced.

        ``base`` holds per-feature contribution columns (from
        ``contribution_column``); ``overrides`` maps term indices to scalar
        contributions.  The accumulation order matches ``decision_scores``,
        so substituted scoring is bit-identical to scoring rebuilt rows.
        """
        n = len(base[0]) if base else 0
        total = np.full(n, self.intercept, dtype=np.float64)
        for i in range(len(self.terms)):
            total += overrides.get(i, base[i] if i < len(base) else 0.0)
        return total

    def predict_batch(self, rows: Sequence[tuple]) -> list[int]:
        return labels_from_scores(self.decision_scores(rows))

    def save(self, path):
        doc = {"format": WEIGHTS_FORMAT, "intercept": self.intercept, "features": []}
        for term in self.terms:
            if isinstance(term, _TableTerm):
                doc["features"].append(
                    {"name": term.name, "encoding": "table",
                     "values": list(term.values), "weights": list(term.weights)}
                )
            else:
                doc["features"].append(
                    {"name": term.name, "encoding": "scaled",
                     "weight": term.weight, "low": term.low, "span": term.span}
                )
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "LogisticPredictor":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("format") != WEIGHTS_FORMAT:
            raise ModelError(f"{path}: not a {WEIGHTS_FORMAT} weight file")
        terms = []
        for feat in doc["features"]:
            if feat["encoding"] == "table":
                terms.append(
                    _TableTerm(feat["name"], tuple(feat["values"]), tuple(map(float, feat["weights"])))
                )
            elif feat["encoding"] == "scaled":
                terms.append(
                    _ScaledTerm(feat["name"], float(feat["weight"]), float(feat["low"]), float(feat["span"]))
                )
            else:
                raise ModelError(f"{path}: unknown feature encoding {feat['encoding']!r}")
        return cls(terms, float(doc["intercept"]))


def labels_from_scores(scores: np.ndarray) -> list[int]:
    """Score >= 0 maps to +1, otherwise -1."""
    return [1 if s >= 0.0 else -1 for s in scores]


def train_logistic(
    dataset: Dataset,
    labels: Sequence[int],
    learning_rate: float = 0.1,
    epochs: int = 500,
    l2: float = 0.0,
) -> LogisticPredictor:
    """Fit the builtin logistic model by deterministic batch gradient descent.

    Features are one-hot encoded (numerical features min-max scaled over the
    training rows), parameters start at zero, and each epoch takes one full
    gradient step, halved as needed so the regularized loss never increases.
    The fitted predictor records its loss trace.
    """
    if len(labels) != len(dataset.rows):
        raise ModelError(f"expected {len(dataset.rows)} labels, got {len(labels)}")
    if not set(labels) <= {-1, 1}:
        raise ModelError("labels must be -1 or +1")
    if len(set(labels)) < 2:
        raise ModelError("training needs at least one row of each label")
    if learning_rate <= 0:
        raise ModelError("learning_rate must be positive")
    if epochs < 0:
        raise ModelError("epochs must be non-negative")
    if l2 < 0:
        raise ModelError("l2 must be non-negative")

    blocks, slices, terms_meta = [], [], []
    start = 0
    for i, feat in enumerate(dataset.schema):
        column = [row[i] for row in dataset.rows]
        if feat.kind == "numerical":
            lo, hi = min(column), max(column)
            span = hi - lo if hi > lo else 0.0
            scaled = (np.asarray(column, dtype=np.float64) - lo) / span if span else np.zeros(len(column))
            blocks.append(scaled[:, None])
            width = 1
            terms_meta.append(("scaled", feat, lo, span))
        else:
            codes = np.fromiter((feat.index(v) for v in column), dtype=np.intp, count=len(column))
            onehot = np.zeros((len(column), len(feat.domain)))
            onehot[np.arange(len(column)), codes] = 1.0
            blocks.append(onehot)
            width = len(feat.domain)
            terms_meta.append(("table", feat, None, None))
        slices.append(slice(start, start + width))
        start += width

    X = np.hstack(blocks)
    y = np.asarray(labels, dtype=np.float64)
    n = len(y)
    w = np.zeros(X.shape[1])
    b = 0.0

    def loss(wv, bv):
        margins = y * (X @ wv + bv)
        value = float(np.mean(np.logaddexp(0.0, -margins))) + 0.5 * l2 * float(wv @ wv)
        if not np.isfinite(value):
            raise ModelError("non-finite training loss")
        return value

    current = loss(w, b)
    trace = [current]
    for _ in range(epochs):
        margins = y * (X @ w + b)
        sig = 0.5 * (1.0 - np.tanh(margins / 2.0))  # sigmoid(-margins), overflow-safe
        grad_w = -(X.T @ (y * sig)) / n + l2 * w
        grad_b = -float(np.mean(y * sig))
        step = learning_rate
        accepted = False
        for _ in range(60):
            w_next = w - step * grad_w
            b_next = b - step * grad_b
            candidate = loss(w_next, b_next)
            if candidate <= current:
                accepted = True
                break
            step /= 2.0
        if not accepted:
            break
        w, b, current = w_next, b_next, candidate
        trace.append(current)

    terms = []
    for (encoding, feat, lo, span), sl in zip(terms_meta, slices):
        if encoding == "scaled":
            terms.append(_ScaledTerm(feat.name, float(w[sl][0]), float(lo), float(span)))
        else:
            terms.append(_TableTerm(feat.name, feat.domain, tuple(float(v) for v in w[sl])))
    return LogisticPredictor(terms, b, tuple(trace))


class RuleTablePredictor(Predictor):
    """Explicit instance -> label map, for tests and transparent fixtures."""

    def __init__(self, feature_names: Sequence[str], table: Mapping[tuple, int]):
        self.feature_names = tuple(feature_names)
        self.table = dict(table)
        bad = {v for v in self.table.values()} - {-1, 1}
        if bad:
            raise ModelError(f"rule table labels must be -1 or +1, got {sorted(bad)}")

    @classmethod
    def from_function(cls, dataset: Dataset, fn) -> "RuleTablePredictor":
        """Tabulate a rule over the full discrete feature space."""
        domains = []
        for feat in dataset.schema:
            if feat.kind == "numerical":
                raise ModelError(
                    f"feature {feat.name!r} is numerical; rule tables need discrete domains"
                )
            domains.append(feat.domain)
        size = 1
        for d in domains:
            size *= len(d)
            if size > _RULE_TABLE_LIMIT:
                raise ModelError(f"feature space too large to tabulate (> {_RULE_TABLE_LIMIT})")
        table = {row: fn(row) for row in itertools.product(*domains)}
        return cls([f.name for f in dataset.schema], table)

    def predict(self, row: tuple) -> int:
        try:
            return self.table[tuple(row)]
        except KeyError:
            raise ModelError(f"instance not in rule table: {row!r}") from None

    def predict_batch(self, rows: Sequence[tuple]) -> list[int]:
        return [self.predict(row) for row in rows]


class _SocketTransport:
    def __init__(self, host: str, port: int):
        try:
            self._sock = socket.create_connection((host, port), timeout=30)
        except OSError as exc:
            raise BridgeError(f"cannot connect to bridge at {host}:{port}: {exc}") from exc
        self._reader = self._sock.makefile("r", encoding="utf-8", newline="\n")

    def write_lines(self, lines: Iterable[str]):
        data = "".join(line + "\n" for line in lines).encode("utf-8")
        try:
            self._sock.sendall(data)
        except OSError as exc:
            raise BridgeError(f"bridge connection lost: {exc}") from exc

    def read_line(self) -> str:
        line = self._reader.readline()
        if not line:
            raise BridgeError("bridge closed the connection")
        return line.rstrip("\n")

    def close(self):
        try:
            self._reader.close()
            self._sock.close()
        except OSError:
            pass


class _StdioTransport:
    def __init__(self, argv: Sequence[str]):
        try:
            self._proc = subprocess.Popen(
                list(argv),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise BridgeError(f"cannot start bridge command {argv!r}: {exc}") from exc

    def write_lines(self, lines: Iterable[str]):
        try:
            self._proc.stdin.write("".join(line + "\n" for line in lines))
            self._proc.stdin.flush()
        except (OSError, ValueError) as exc:
            raise BridgeError(f"bridge process lost: {exc}") from exc

    def read_line(self) -> str:
        line = self._proc.stdout.readline()
        if not line:
            raise BridgeError("bridge process closed its output")
        return line.rstrip("\n")

    def close(self):
        for stream in (self._proc.stdin, self._proc.stdout):
            try:
                stream.close()
            except OSError:
                pass
        self._proc.terminate()
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()


class BridgePredictor(Predictor):
    """Client for an external model serving the line protocol.

    On first use the client sends ``SCHEMA <comma-joined feature names>`` and
    expects ``OK``.  Each ``predict_batch`` becomes one ``PREDICT <n>``
    exchange; requests on a connection are serialized, one in flight.
    """

    def __init__(self, feature_names: Sequence[str], endpoint, delimiter: str = ","):
        self.feature_names = tuple(feature_names)
        self.endpoint = endpoint
        self.delimiter = delimiter
        self._transport = None
        self._lock = threading.Lock()

    def _connect(self):
        kind = self.endpoint[0]
        if kind == "tcp":
            transport = _SocketTransport(self.endpoint[1], self.endpoint[2])
        elif kind == "stdio":
            transport = _StdioTransport(self.endpoint[1])
        else:
            raise BridgeError(f"unknown bridge endpoint kind {kind!r}")
        transport.write_lines([f"SCHEMA {','.join(self.feature_names)}"])
        reply = transport.read_line()
        if reply != "OK":
            transport.close()
            if reply.startswith("ERR "):
                raise BridgeError(f"bridge rejected the schema: {reply[4:]}")
            raise BridgeError(f"unexpected handshake reply: {reply!r}")
        self._transport = transport

    def predict_batch(self, rows: Sequence[tuple]) -> list[int]:
        rows = list(rows)
        if not rows:
            return []
        with self._lock:
            if self._transport is None:
                self._connect()
            lines = [f"PREDICT {len(rows)}"]
            for row in rows:
                if len(row) != len(self.feature_names):
                    raise ModelError(
                        f"expected {len(self.feature_names)} values per instance, got {len(row)}"
                    )
                lines.append(self.delimiter.join(format_value(v) for v in row))
            self._transport.write_lines(lines)
            reply = self._transport.read_line()
        if reply.startswith("ERR "):
            raise BridgeError(f"bridge rejected the request: {reply[4:]}")
        tokens = reply.split()
        if len(tokens) != len(rows):
            raise BridgeError(f"expected {len(rows)} labels, got {len(tokens)}")
        labels = []
        for token in tokens:
            if token not in ("-1", "1"):
                raise BridgeError(f"invalid label token {token!r}")
            labels.append(int(token))
        return labels

    def close(self):
        if self._transport is not None:
            self._transport.close()
            self._transport = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
