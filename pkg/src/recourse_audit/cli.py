"""Command line front end: run audits, re-rank stored reports, compare.

One YAML configuration document drives an audit run; command-line flags
override scalar fields (flag > file > default).  Exit codes: 0 success,
1 validation error, 2 runtime error, 3 bridge transport error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from dataclasses import dataclass
from typing import Mapping, Sequence

import yaml

from .audit import AuditConfig, DefinitionSpec, run_audit
from .metrics import VIEWPOINTS
from .model import (
    BridgeError,
    BridgePredictor,
    LogisticPredictor,
    ModelError,
    train_logistic,
)
from .report import load_report, render_analysis_text, render_ranking_text, write_report_files
from .schema import (
    DatasetError,
    SchemaError,
    apply_bins,
    load_dataset,
    load_labeled_dataset,
    load_schema_file,
)


class ConfigError(ValueError):
    """Invalid run configuration; the message names the field."""


_TOP_KEYS = {
    "dataset", "schema", "protected", "delimiter", "predictor", "min_support",
    "action_min_support", "definitions", "budgets", "alpha", "c_inf", "workers", "output",
}
_OUTPUT_KEYS = {"dir", "basename", "top", "details", "figures"}
_TRAIN_KEYS = {"learning_rate", "epochs", "l2", "save"}
_DEFINITION_KEYS = {"metric", "viewpoint", "phi", "budget", "alpha", "conditional", "c_inf"}


@dataclass
class RunConfig:
    """A fully resolved audit run configuration."""

    dataset: str
    schema: str
    predictor: dict
    protected: str | None = None
    delimiter: str = ","
    min_support: float = 0.01
    action_min_support: float | None = None
    definitions: tuple[DefinitionSpec, ...] | None = None
    budgets: tuple[float, ...] | None = None
    budget_percentiles: tuple[float, ...] = (30.0, 60.0, 90.0)
    alpha: float = 0.05
    c_inf: float | None = None
    workers: int = 1
    out_dir: str = "reports"
    basename: str = "audit"
    top: int = 10
    details: int = 3
    figures: bool = True


def _require(condition: bool, field: str, message: str):
    if not condition:
        raise ConfigError(f"{field}: {message}")


def _number(value, field: str) -> float:
    _require(isinstance(value, (int, float)) and not isinstance(value, bool), field, "must be a number")
    return float(value)


def _parse_budgets(value, field: str):
    """Budget config: explicit values, or 'percentile:P,...' to derive them."""
    if isinstance(value, str):
        text = value.strip()
        if text.startswith("percentile:"):
            parts = text[len("percentile:"):].split(",")
            percentiles = tuple(_parse_number_text(p, field) for p in parts)
            for p in percentiles:
                _require(0 < p <= 100, field, f"percentile {p} outside (0, 100]")
            return None, percentiles
        value = [_parse_number_text(p, field) for p in text.split(",")]
    _require(isinstance(value, (list, tuple)) and value, field, "must be numbers or 'percentile:...'")
    budgets = tuple(_number(v, field) for v in value)
    for b in budgets:
        _require(b >= 0, field, f"budget {b} must be non-negative")
    return budgets, None


def _parse_number_text(text: str, field: str) -> float:
    try:
        return float(text.strip())
    except ValueError:
        raise ConfigError(f"{field}: not a number: {text.strip()!r}") from None


def _parse_definition(doc, field: str) -> DefinitionSpec:
    _require(isinstance(doc, Mapping), field, "must be a mapping")
    unknown = set(doc) - _DEFINITION_KEYS
    _require(not unknown, field, f"unknown keys {sorted(unknown)}")
    _require("metric" in doc, field, "metric is required")
    kwargs = {"metric": doc["metric"]}
    if "viewpoint" in doc:
        _require(doc["viewpoint"] in VIEWPOINTS, f"{field}.viewpoint", f"expected one of {VIEWPOINTS}")
        kwargs["viewpoint"] = doc["viewpoint"]
    if doc.get("phi") is not None:
        phi = _number(doc["phi"], f"{field}.phi")
        _require(0.0 <= phi <= 1.0, f"{field}.phi", "must be in [0, 1]")
        kwargs["phi"] = phi
    if doc.get("budget") is not None:
        budget = _number(doc["budget"], f"{field}.budget")
        _require(budget >= 0.0, f"{field}.budget", "must be non-negative")
        kwargs["budget"] = budget
    if doc.get("alpha") is not None:
        alpha = _number(doc["alpha"], f"{field}.alpha")
        _require(0.0 < alpha < 1.0, f"{field}.alpha", "must be in (0, 1)")
        kwargs["alpha"] = alpha
    if "conditional" in doc:
        _require(isinstance(doc["conditional"], bool), f"{field}.conditional", "must be a boolean")
        kwargs["conditional"] = doc["conditional"]
    if doc.get("c_inf") is not None:
        c_inf = _number(doc["c_inf"], f"{field}.c_inf")
        _require(c_inf > 0.0, f"{field}.c_inf", "must be positive")
        kwargs["c_inf"] = c_inf
    try:
        return DefinitionSpec(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{field}: {exc}") from None


def _parse_predictor(doc, field: str) -> dict:
    _require(isinstance(doc, Mapping), field, "must be a mapping")
    kinds = [k for k in ("weights", "train", "bridge") if k in doc]
    _require(len(doc) == len(kinds), field, "allowed keys: weights, train, bridge")
    _require(len(kinds) == 1, field, "exactly one of weights, train, bridge required")
    kind = kinds[0]
    value = doc[kind]
    if kind == "weights":
        _require(isinstance(value, str) and value, f"{field}.weights", "must be a file path")
        return {"kind": "weights", "path": value}
    if kind == "bridge":
        _require(isinstance(value, str) and value, f"{field}.bridge", "must be an endpoint")
        return {"kind": "bridge", "endpoint": _parse_endpoint(value, f"{field}.bridge")}
    options = {"learning_rate": 0.1, "epochs": 500, "l2": 0.0, "save": None}
    if value is None:
        value = {}
    _require(isinstance(value, Mapping), f"{field}.train", "must be a mapping or empty")
    unknown = set(value) - _TRAIN_KEYS
    _require(not unknown, f"{field}.train", f"unknown keys {sorted(unknown)}")
    if "learning_rate" in value:
        options["learning_rate"] = _number(value["learning_rate"], f"{field}.train.learning_rate")
        _require(options["learning_rate"] > 0, f"{field}.train.learning_rate", "must be positive")
    if "epochs" in value:
        _require(
            isinstance(value["epochs"], int) and value["epochs"] >= 0,
            f"{field}.train.epochs", "must be a non-negative integer",
        )
        options["epochs"] = value["epochs"]
    if "l2" in value:
        options["l2"] = _number(value["l2"], f"{field}.train.l2")
        _require(options["l2"] >= 0, f"{field}.train.l2", "must be non-negative")
    if value.get("save") is not None:
        _require(isinstance(value["save"], str), f"{field}.train.save", "must be a file path")
        options["save"] = value["save"]
    return {"kind": "train", **options}


def _parse_endpoint(text: str, field: str):
    if text.startswith("tcp://"):
        rest = text[len("tcp://"):]
        host, sep, port = rest.rpartition(":")
        _require(bool(sep) and bool(host), field, "expected tcp://host:port")
        _require(port.isdigit(), field, f"invalid port {port!r}")
        return ("tcp", host, int(port))
    if text.startswith("stdio:"):
        import shlex

        argv = shlex.split(text[len("stdio:"):])
        _require(bool(argv), field, "expected stdio:command ...")
        return ("stdio", tuple(argv))
    raise ConfigError(f"{field}: expected tcp://host:port or stdio:command")


def build_run_config(doc: Mapping, overrides: Mapping) -> RunConfig:
    """Merge a config document with flag overrides; flag > file > default."""
    _require(isinstance(doc, Mapping), "config", "document must be a mapping")
    unknown = set(doc) - _TOP_KEYS
    _require(not unknown, "config", f"unknown keys {sorted(unknown)}")
    output = doc.get("output") or {}
    _require(isinstance(output, Mapping), "output", "must be a mapping")
    unknown = set(output) - _OUTPUT_KEYS
    _require(not unknown, "output", f"unknown keys {sorted(unknown)}")

    def pick(name, file_value, default):
        value = overrides.get(name)
        if value is not None:
            return value
        return default if file_value is None else file_value

    dataset = pick("dataset", doc.get("dataset"), None)
    _require(isinstance(dataset, str) and bool(dataset), "dataset", "file path required")
    schema = pick("schema", doc.get("schema"), None)
    _require(isinstance(schema, str) and bool(schema), "schema", "file path required")

    predictor_doc = doc.get("predictor")
    for kind in ("weights", "bridge", "train"):
        if overrides.get(kind) is not None:
            value = {"weights": overrides.get("weights"), "bridge": overrides.get("bridge"),
                     "train": {} if kind == "train" else None}[kind]
            predictor_doc = {kind: value}
            break
    _require(predictor_doc is not None, "predictor", "one of weights, train, bridge required")
    predictor = _parse_predictor(predictor_doc, "predictor")
    if predictor["kind"] == "train" and overrides.get("save_weights"):
        predictor["save"] = overrides["save_weights"]

    protected = pick("protected", doc.get("protected"), None)
    if protected is not None:
        _require(isinstance(protected, str) and bool(protected), "protected", "feature name required")

    delimiter = pick("delimiter", doc.get("delimiter"), ",")
    _require(isinstance(delimiter, str) and len(delimiter) == 1, "delimiter", "must be one character")

    min_support = _number(pick("min_support", doc.get("min_support"), 0.01), "min_support")
    _require(0.0 < min_support <= 1.0, "min_support", "must be in (0, 1]")
    action_min_support = pick("action_min_support", doc.get("action_min_support"), None)
    if action_min_support is not None:
        action_min_support = _number(action_min_support, "action_min_support")
        _require(0.0 < action_min_support <= 1.0, "action_min_support", "must be in (0, 1]")

    definitions = None
    if doc.get("definitions") is not None:
        raw = doc["definitions"]
        _require(isinstance(raw, (list, tuple)), "definitions", "must be a list")
        _require(bool(raw), "definitions", "at least one definition required")
        definitions = tuple(
            _parse_definition(entry, f"definitions[{k}]") for k, entry in enumerate(raw)
        )

    budgets, percentiles = None, (30.0, 60.0, 90.0)
    raw_budgets = pick("budgets", doc.get("budgets"), None)
    if raw_budgets is not None:
        budgets, derived = _parse_budgets(raw_budgets, "budgets")
        if derived is not None:
            percentiles = derived

    alpha = _number(pick("alpha", doc.get("alpha"), 0.05), "alpha")
    _require(0.0 < alpha < 1.0, "alpha", "must be in (0, 1)")

    c_inf = pick("c_inf", doc.get("c_inf"), None)
    if c_inf is not None:
        c_inf = _number(c_inf, "c_inf")
        _require(c_inf > 0.0, "c_inf", "must be positive")

    workers = pick("workers", doc.get("workers"), 1)
    _require(isinstance(workers, int) and workers >= 1, "workers", "must be a positive integer")

    out_dir = pick("out", output.get("dir"), "reports")
    _require(isinstance(out_dir, str) and bool(out_dir), "output.dir", "directory path required")
    basename = pick("basename", output.get("basename"), "audit")
    _require(isinstance(basename, str) and bool(basename), "output.basename", "name required")
    top = pick("top", output.get("top"), 10)
    _require(isinstance(top, int) and top >= 0, "output.top", "must be a non-negative integer")
    details = pick("details", output.get("details"), 3)
    _require(isinstance(details, int) and details >= 0, "output.details", "must be a non-negative integer")
    figures = pick("figures", output.get("figures"), True)
    _require(isinstance(figures, bool), "output.figures", "must be a boolean")

    return RunConfig(
        dataset=dataset,
        schema=schema,
        predictor=predictor,
        protected=protected,
        delimiter=delimiter,
        min_support=min_support,
        action_min_support=action_min_support,
        definitions=definitions,
        budgets=budgets,
        budget_percentiles=percentiles,
        alpha=alpha,
        c_inf=c_inf,
        workers=workers,
        out_dir=out_dir,
        basename=basename,
        top=top,
        details=details,
        figures=figures,
    )


def _load_config_doc(path) -> dict:
    with open(path, encoding="utf-8") as handle:
        doc = yaml.safe_load(handle)
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("config: document must be a mapping")
    return doc


def _build_predictor(config: RunConfig, dataset):
    """Build the configured weights or bridge predictor for a loaded dataset."""
    source = config.predictor
    if source["kind"] == "weights":
        predictor = LogisticPredictor.load(source["path"])
        names = [t.name for t in predictor.terms]
        expected = [f.name for f in dataset.schema]
        if names != expected:
            raise ModelError(
                f"weights file features {names} do not match schema features {expected}"
            )
        return predictor, f"weights {source['path']}"
    if source["kind"] == "bridge":
        endpoint = source["endpoint"]
        predictor = BridgePredictor(
            [f.name for f in dataset.schema], endpoint, delimiter=config.delimiter
        )
        text = (
            f"tcp://{endpoint[1]}:{endpoint[2]}" if endpoint[0] == "tcp"
            else "stdio:" + " ".join(endpoint[1])
        )
        return predictor, f"bridge {text}"
    raise AssertionError("train predictors are built in cmd_audit")


def cmd_audit(args) -> int:
    doc = _load_config_doc(args.config) if args.config else {}
    overrides = {
        key: getattr(args, key)
        for key in (
            "dataset", "schema", "protected", "delimiter", "weights", "bridge", "train",
            "save_weights", "min_support", "action_min_support", "budgets", "alpha",
            "c_inf", "workers", "out", "basename", "top", "details", "figures",
        )
    }
    config = build_run_config(doc, overrides)
    spec = load_schema_file(config.schema)
    if config.protected is not None:
        spec = dataclasses.replace(spec, protected=config.protected)

    if config.predictor["kind"] == "train":
        dataset, labels = load_labeled_dataset(config.dataset, spec, config.delimiter)
        dataset = apply_bins(dataset, spec.bins)
        predictor = train_logistic(
            dataset,
            labels,
            learning_rate=config.predictor["learning_rate"],
            epochs=config.predictor["epochs"],
            l2=config.predictor["l2"],
        )
        description = "trained on the labelled dataset"
        if config.predictor["save"]:
            predictor.save(config.predictor["save"])
            description += f" (weights saved to {config.predictor['save']})"
    else:
        dataset = apply_bins(load_dataset(config.dataset, spec, config.delimiter), spec.bins)
        predictor, description = _build_predictor(config, dataset)

    audit_config = AuditConfig(
        min_support=config.min_support,
        action_min_support=config.action_min_support,
        definitions=config.definitions,
        budgets=config.budgets,
        budget_percentiles=config.budget_percentiles,
        alpha=config.alpha,
        c_inf=config.c_inf,
        workers=config.workers,
    )
    source = {"dataset": config.dataset, "schema": config.schema, "predictor": description}
    report = run_audit(dataset, predictor, audit_config, source=source)
    if hasattr(predictor, "close"):
        predictor.close()
    paths = write_report_files(
        report,
        config.out_dir,
        basename=config.basename,
        top=config.top,
        details=config.details,
        figures=config.figures,
    )
    for key in ("json", "text", "rankings"):
        print(f"wrote {paths[key]}")
    if paths["figures"]:
        print(f"wrote {len(paths['figures'])} figures under {config.out_dir}")
    return 0


def cmd_rank(args) -> int:
    data = load_report(args.report)
    ids = [d["id"] for d in data["definitions"]]
    if args.definition not in ids:
        raise ConfigError(
            f"definition: unknown id {args.definition!r}; available: {', '.join(ids)}"
        )
    print(render_ranking_text(data, args.definition, top=args.top, details=args.top))
    return 0


def cmd_compare(args) -> int:
    data = load_report(args.report)
    if len(data["definitions"]) < 2:
        raise ConfigError("report: comparison needs at least two definitions")
    print(render_analysis_text(data))
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="recourse-audit",
        description="Audit a binary classifier for subgroup recourse unfairness.",
    )
    commands = parser.add_subparsers(dest="command", metavar="command")

    audit = commands.add_parser("audit", help="run an audit and write report files")
    audit.add_argument("--config", help="YAML run configuration")
    audit.add_argument("--dataset", help="delimited data file")
    audit.add_argument("--schema", help="YAML schema document")
    audit.add_argument("--protected", help="protected feature (defaults to the schema's)")
    audit.add_argument("--delimiter", help="field delimiter (default ,)")
    group = audit.add_mutually_exclusive_group()
    group.add_argument("--weights", help="builtin model weights file")
    group.add_argument("--bridge", help="external model endpoint (tcp://host:port or stdio:cmd)")
    group.add_argument("--train", action="store_true", default=None,
                       help="train the builtin model on the labelled dataset")
    audit.add_argument("--save-weights", dest="save_weights",
                       help="with --train: export the trained weights")
    audit.add_argument("--min-support", dest="min_support", type=float,
                       help="subgroup frequency threshold (default 0.01)")
    audit.add_argument("--action-min-support", dest="action_min_support", type=float,
                       help="action frequency threshold (defaults to --min-support)")
    audit.add_argument("--budgets", help="'3,6,9' or 'percentile:30,60,90' (default)")
    audit.add_argument("--alpha", type=float, help="trade-off confidence level (default 0.05)")
    audit.add_argument("--c-inf", dest="c_inf", type=float,
                       help="price of no recourse (default: 2 x the largest finite cost)")
    audit.add_argument("--workers", type=int, help="evaluation threads (default 1)")
    audit.add_argument("--out", help="report directory (default reports)")
    audit.add_argument("--basename", help="report file stem (default audit)")
    audit.add_argument("--top", type=int, help="ranked rows per definition (default 10)")
    audit.add_argument("--details", type=int, help="detail blocks per definition (default 3)")
    audit.add_argument("--figures", action=argparse.BooleanOptionalAction, default=None,
                       help="render figures (default on)")
    audit.set_defaults(func=cmd_audit)

    rank = commands.add_parser("rank", help="print the most unfair subgroups of a stored report")
    rank.add_argument("--report", required=True, help="stored JSON report")
    rank.add_argument("--definition", required=True, help="definition id from the report")
    rank.add_argument("--top", type=int, default=3, help="entries to print (default 3)")
    rank.set_defaults(func=cmd_rank)

    compare = commands.add_parser("compare", help="print the cross-definition tables of a report")
    compare.add_argument("--report", required=True, help="stored JSON report")
    compare.set_defaults(func=cmd_compare)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "command", None) is None:
            parser.print_usage(sys.stderr)
            print("error: a command is required (audit, rank, compare)", file=sys.stderr)
            return 1
        return args.func(args)
    except BridgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, SchemaError, DatasetError, ModelError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pipeline failures: keep the exit contract
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
