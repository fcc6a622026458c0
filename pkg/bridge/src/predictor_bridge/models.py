"""Model loading for the bridge server.

Two kinds of model file can be served: JSON weight files in the
``recourse-audit-logistic/1`` format that the auditing engine exports, and
Python source files exposing a batch-predict entry point.  Both reduce to
the same narrow interface: ``feature_names``, a tuple pinning the schema the
server accepts (or None to accept any), and ``predict_rows``, which maps a
batch of wire-format rows to one number per row, either a label or a
decision score.
"""

from __future__ import annotations

import importlib.util
import json
from pathlib import Path
from typing import Sequence

LOGISTIC_FORMAT = "recourse-audit-logistic/1"


class ModelLoadError(ValueError):
    """The model file cannot be loaded or has an invalid shape."""


def _require(condition, message: str):
    if not condition:
        raise ModelLoadError(message)


class _TableTerm:
    """One weight per domain value; the wire token is the value itself."""

    def __init__(self, name: str, values: Sequence[str], weights: Sequence[float]):
        self.name = name
        self.weights = {v: float(w) for v, w in zip(values, weights)}

    def contribution(self, token: str) -> float:
        try:
            return self.weights[token]
        except KeyError:
            raise ValueError(
                f"feature {self.name!r}: value {token!r} unknown to the model"
            ) from None


class _ScaledTerm:
    """Weight times the min-max scaled numeric value."""

    def __init__(self, name: str, weight: float, low: float, span: float):
        self.name = name
        self.weight = weight
        self.low = low
        self.span = span

    def contribution(self, token: str) -> float:
        try:
            value = float(token)
        except ValueError:
            raise ValueError(f"feature {self.name!r}: {token!r} is not numeric") from None
        if not self.span:
            return 0.0
        return self.weight * ((value - self.low) / self.span)


class LogisticModel:
    """Linear scorer rebuilt from an exported weight file alone.

    The decision score is the intercept plus one contribution per feature,
    accumulated in file order with plain float arithmetic.  Float text on
    the wire round-trips exactly, so labels reproduce the engine's
    in-process model bit for bit.
    """

    def __init__(self, terms: Sequence, intercept: float):
        self.terms = tuple(terms)
        self.intercept = float(intercept)
        self.feature_names = tuple(t.name for t in self.terms)

    def predict_rows(self, rows: Sequence[Sequence[str]]) -> list[float]:
        scores = []
        for row in rows:
            score = self.intercept
            for term, token in zip(self.terms, row):
                score += term.contribution(token)
            scores.append(score)
        return scores


class PythonModel:
    """Batch-predict callable imported from a user's Python source file.

    The file must provide either a ``load_model()`` factory returning the
    model object or a module-level ``predict_batch`` callable.  The callable
    receives a list of rows, each a list of raw wire tokens in schema column
    order, and returns one label or score per row.  A ``feature_names``
    attribute, when present, pins the schema the server accepts.
    """

    def __init__(self, predict, feature_names):
        self._predict = predict
        self.feature_names = tuple(feature_names) if feature_names is not None else None

    def predict_rows(self, rows: Sequence[Sequence[str]]):
        return self._predict(rows)


def _load_logistic(path: Path) -> LogisticModel:
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ModelLoadError(f"{path}: {exc}") from exc
    _require(isinstance(doc, dict), f"{path}: weight file must hold a JSON object")
    _require(doc.get("format") == LOGISTIC_FORMAT, f"{path}: not a {LOGISTIC_FORMAT} weight file")
    try:
        intercept = float(doc["intercept"])
    except (KeyError, TypeError, ValueError):
        raise ModelLoadError(f"{path}: intercept must be a number") from None
    features = doc.get("features")
    _require(isinstance(features, list), f"{path}: features must be a list")
    terms = []
    for feat in features:
        _require(
            isinstance(feat, dict) and isinstance(feat.get("name"), str),
            f"{path}: every feature needs a name",
        )
        name = feat["name"]
        encoding = feat.get("encoding")
        if encoding == "table":
            values, weights = feat.get("values"), feat.get("weights")
            _require(
                isinstance(values, list)
                and isinstance(weights, list)
                and len(values) == len(weights)
                and len(set(map(str, values))) == len(values),
                f"{path}: feature {name!r} needs matching unique values and weights",
            )
            try:
                terms.append(_TableTerm(name, [str(v) for v in values], [float(w) for w in weights]))
            except (TypeError, ValueError):
                raise ModelLoadError(f"{path}: feature {name!r} has non-numeric weights") from None
        elif encoding == "scaled":
            try:
                terms.append(
                    _ScaledTerm(name, float(feat["weight"]), float(feat["low"]), float(feat["span"]))
                )
            except (KeyError, TypeError, ValueError):
                raise ModelLoadError(
                    f"{path}: feature {name!r} needs numeric weight, low, and span"
                ) from None
        else:
            raise ModelLoadError(f"{path}: unknown feature encoding {encoding!r}")
    names = [t.name for t in terms]
    _require(len(set(names)) == len(names), f"{path}: duplicate feature names")
    return LogisticModel(terms, intercept)


def _load_python(path: Path) -> PythonModel:
    spec = importlib.util.spec_from_file_location(f"bridge_model_{path.stem}", path)
    _require(spec is not None and spec.loader is not None, f"{path}: cannot import")
    module = importlib.util.module_from_spec(spec)
    try:
        spec.loader.exec_module(module)
    except Exception as exc:
        raise ModelLoadError(f"{path}: import failed: {exc}") from exc
    target = module
    factory = getattr(module, "load_model", None)
    if callable(factory):
        try:
            target = factory()
        except Exception as exc:
            raise ModelLoadError(f"{path}: load_model() failed: {exc}") from exc
    predict = getattr(target, "predict_batch", None)
    _require(callable(predict), f"{path}: needs load_model() or a predict_batch callable")
    names = getattr(target, "feature_names", None)
    if names is not None:
        names = [str(n) for n in names]
    return PythonModel(predict, names)


def load_model(path_text: str):
    """Load a servable model from a weight file (.json) or Python source (.py)."""
    path = Path(path_text)
    if not path.is_file():
        raise ModelLoadError(f"{path}: no such file")
    suffix = path.suffix.lower()
    if suffix == ".json":
        return _load_logistic(path)
    if suffix == ".py":
        return _load_python(path)
    raise ModelLoadError(f"{path}: unsupported model kind {suffix!r}, expected .json or .py")
