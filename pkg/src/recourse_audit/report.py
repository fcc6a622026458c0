"""Report output: structured JSON, plain text, delimited rankings, figures.

The JSON document is the machine-readable record of a run; the text report,
the rankings CSV, and the figures are derived views.  Text and CSV render
from the JSON dictionary so that a stored report reproduces them exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

from .actions import INFINITE
from .audit import AuditReport, display_actions, format_score, render_csc
from .metrics import effectiveness

REPORT_FORMAT = "recourse-audit-report/1"


def _score(value):
    return "inf" if value == INFINITE else value


def report_to_dict(report: AuditReport) -> dict:
    """Serialize a report to plain data; infinities become the string 'inf'."""
    labels = report.protected_labels
    subgroup_index = {id(sub): k for k, sub in enumerate(report.subgroups)}

    subgroups = []
    for sub in report.subgroups:
        subgroups.append(
            {
                "predicate": sub.predicate.describe(),
                "size0": sub.size(0),
                "size1": sub.size(1),
                "coverage0": sub.coverage0,
                "coverage1": sub.coverage1,
                "actions": [
                    {
                        "make": act.action.describe(),
                        "cost": _score(act.cost),
                        "effectiveness0": effectiveness(act, 0, sub.size(0)),
                        "effectiveness1": effectiveness(act, 1, sub.size(1)),
                    }
                    for act in sub.actions
                ],
            }
        )

    definitions = []
    for spec in report.definitions:
        definitions.append(
            {
                "id": spec.id,
                "display": spec.display,
                "metric": spec.metric,
                "viewpoint": spec.viewpoint,
                "phi": spec.phi,
                "budget": spec.budget,
                "alpha": spec.alpha,
                "conditional": spec.conditional,
                "c_inf": spec.c_inf,
            }
        )

    rankings = []
    for ranked in report.rankings:
        entries = []
        for entry in ranked.entries:
            sub = entry.subgroup
            out = entry.outcome
            position = {id(act): k for k, act in enumerate(sub.actions)}
            shown0, shown1 = display_actions(sub, ranked.definition)
            entries.append(
                {
                    "subgroup": subgroup_index[id(sub)],
                    "predicate": sub.predicate.describe(),
                    "rank": entry.rank,
                    "fair": out.fair,
                    "score0": _score(out.score0),
                    "score1": _score(out.score1),
                    "unfairness": _score(out.unfairness),
                    "bias_against": None if out.bias_against is None else labels[out.bias_against],
                    "threshold": out.threshold,
                    "within_confidence": out.within_confidence,
                    "actions0": [position[id(act)] for act in shown0],
                    "actions1": [position[id(act)] for act in shown1],
                }
            )
        rankings.append({"definition": ranked.definition.id, "entries": entries})

    analysis = [
        {
            "definition": row["definition"].id,
            "rank_one_count": row["rank_one_count"],
            "top_count": row["top_count"],
            "bias_against_0": row["bias_against_0"],
            "bias_against_1": row["bias_against_1"],
        }
        for row in report.analysis
    ]

    return {
        "format": REPORT_FORMAT,
        "protected": {"feature": report.protected, "side0": labels[0], "side1": labels[1]},
        "summary": report.summary,
        "definitions": definitions,
        "subgroups": subgroups,
        "rankings": rankings,
        "analysis": analysis,
        "aggregation": report.aggregation,
    }


def report_to_json(report: AuditReport) -> str:
    # allow_nan=False traps any infinity that escaped the 'inf' encoding.
    return json.dumps(report_to_dict(report), indent=2, allow_nan=False)


def load_report(path) -> dict:
    with open(path, encoding="utf-8") as handle:
        data = json.load(handle)
    if not isinstance(data, dict) or data.get("format") != REPORT_FORMAT:
        raise ValueError(f"{path}: not a {REPORT_FORMAT} document")
    return data


def csc_from_records(data: dict, definition_id: str, entry: dict) -> str:
    """Rebuild a comparative subgroup summary from a stored report."""
    definition = _definition_record(data, definition_id)
    sub = data["subgroups"][entry["subgroup"]]
    sides = []
    for side in (1, 0):
        rows = [
            (
                sub["actions"][k]["make"],
                sub["actions"][k]["cost"],
                sub["actions"][k][f"effectiveness{side}"],
            )
            for k in entry[f"actions{side}"]
        ]
        sides.append((data["protected"][f"side{side}"], rows))
    return render_csc(
        entry["predicate"],
        sides,
        definition["display"],
        entry["fair"],
        entry["bias_against"],
        entry["unfairness"],
    )


def _definition_record(data: dict, definition_id: str) -> dict:
    for record in data["definitions"]:
        if record["id"] == definition_id:
            return record
    raise ValueError(f"definition {definition_id!r} not in report")


def _ranking_record(data: dict, definition_id: str) -> dict:
    for record in data["rankings"]:
        if record["definition"] == definition_id:
            return record
    raise ValueError(f"definition {definition_id!r} not in report")


def _table(headers: Sequence[str], rows: Sequence[Sequence[str]]) -> list[str]:
    widths = [len(h) for h in headers]
    for row in rows:
        for k, cell in enumerate(row):
            widths[k] = max(widths[k], len(cell))
    lines = ["  ".join(h.ljust(widths[k]) for k, h in enumerate(headers)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[k]) for k, cell in enumerate(row)).rstrip())
    return lines


def render_ranking_text(data: dict, definition_id: str, top: int = 10, details: int = 3) -> str:
    """Ranked list plus detail blocks for one definition of a stored report."""
    definition = _definition_record(data, definition_id)
    record = _ranking_record(data, definition_id)
    entries = record["entries"]
    unfair = [e for e in entries if e["rank"] is not None]
    lines = [f"== {definition['display']} =="]
    if not unfair:
        lines.append(f"All subgroups fair under {definition['display']}.")
        return "\n".join(lines)
    rows = [
        (
            str(e["rank"]),
            format_score(e["unfairness"]),
            f"'{e['bias_against']}'",
            e["predicate"],
        )
        for e in unfair[:top]
    ]
    lines += _table(("rank", "unfairness", "bias against", "subgroup"), rows)
    if len(unfair) > top:
        lines.append(f"... {len(unfair) - top} more unfair subgroups")
    lines.append(f"Fair subgroups: {len(entries) - len(unfair)} of {len(entries)}")
    for e in unfair[:details]:
        lines.append("")
        lines.append(csc_from_records(data, definition_id, e))
    return "\n".join(lines)


def render_analysis_text(data: dict) -> str:
    """Both cross-definition tables of a stored report as text."""
    labels = (data["protected"]["side0"], data["protected"]["side1"])
    display = {d["id"]: d["display"] for d in data["definitions"]}
    lines = ["Ranking analysis", ""]
    rows = [
        (
            display[row["definition"]],
            str(row["rank_one_count"]),
            str(row["top_count"]),
            str(row["bias_against_0"]),
            str(row["bias_against_1"]),
        )
        for row in data["analysis"]
    ]
    lines += _table(
        ("definition", "rank-1 ties", "top slice", f"bias vs '{labels[0]}'", f"bias vs '{labels[1]}'"),
        rows,
    )
    lines += ["", "Aggregated rankings", ""]
    ids = [d["id"] for d in data["definitions"]]
    names = [f"D{k + 1}" for k in range(len(ids))]
    for name, definition_id in zip(names, ids):
        lines.append(f"{name}: {display[definition_id]}")
    lines.append("")
    rows = []
    for k, row in enumerate(data["aggregation"]):
        cells = ["-" if cell is None else f"{cell:.2f}" for cell in row]
        rows.append([names[k]] + cells)
    lines += _table([""] + names, rows)
    return "\n".join(lines)


def render_text(data: dict, top: int = 10, details: int = 3) -> str:
    """Full text report from a stored report dictionary."""
    summary = data["summary"]
    protected = data["protected"]
    lines = ["Recourse audit", "=============="]
    source = summary.get("source") or {}
    for key, value in source.items():
        lines.append(f"{key}: {value}")
    lines += [
        f"protected feature: {protected['feature']} "
        f"(side 0 = '{protected['side0']}', side 1 = '{protected['side1']}')",
        f"rows: {summary['rows']} (dropped at load: {summary['rows_dropped_at_load']})",
        f"affected: {summary['affected']} "
        f"('{protected['side0']}': {summary['affected_side0']}, "
        f"'{protected['side1']}': {summary['affected_side1']})",
        f"subgroup support: {summary['min_support']}, action support: {summary['action_min_support']}",
        f"actions mined: {summary['actions_mined']}",
        f"subgroups audited: {summary['subgroups_audited']} of {summary['subgroups_mined']} mined "
        f"(skipped {summary['excluded_empty_side']} with an empty side)",
        f"infeasible subgroup-action pairs: {summary['infeasible_pairs']}",
        "budgets: " + (", ".join(format_score(b) for b in summary["budgets"]) or "-")
        + (f" ({summary['budget_note']})" if summary["budget_note"] else ""),
        f"price of no recourse: {format_score(summary['c_inf'])} ({summary['c_inf_note']})",
        "",
    ]
    for record in data["rankings"]:
        lines.append(render_ranking_text(data, record["definition"], top=top, details=details))
        lines.append("")
    lines.append(render_analysis_text(data))
    lines.append("")
    return "\n".join(lines)


def write_rankings_csv(data: dict, path) -> None:
    """One delimited row per (definition, subgroup), ranked entries in order."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["definition", "rank", "fair", "unfairness", "score0", "score1", "bias_against", "subgroup"]
        )
        for record in data["rankings"]:
            for e in record["entries"]:
                writer.writerow(
                    [
                        record["definition"],
                        "" if e["rank"] is None else e["rank"],
                        "true" if e["fair"] else "false",
                        format_score(e["unfairness"]),
                        format_score(e["score0"]),
                        format_score(e["score1"]),
                        "" if e["bias_against"] is None else e["bias_against"],
                        e["predicate"],
                    ]
                )


def render_figures(report: AuditReport, outdir, basename: str = "audit") -> list[Path]:
    """Per definition: a top-unfairness bar chart, and the most unfair
    subgroup's effectiveness-cost curves.  Returns the written paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    outdir = Path(outdir)
    labels = report.protected_labels
    written = []
    for ranked in report.rankings:
        spec = ranked.definition
        unfair = [e for e in ranked.entries if e.rank is not None]
        if not unfair:
            continue
        head = unfair[:10]
        values = [float(e.outcome.unfairness) for e in head]
        finite = [v for v in values if v != INFINITE]
        cap = 1.1 * max(finite) if finite else 1.0
        heights = [v if v != INFINITE else cap for v in values]
        names = [_shorten(e.subgroup.predicate.describe()) for e in head]

        fig, ax = plt.subplots(figsize=(8.0, 4.5), dpi=120)
        bars = ax.barh(range(len(head)), heights, color="#4878a8")
        for k, (bar, value) in enumerate(zip(bars, values)):
            if value == INFINITE:
                bar.set_color("#b04030")
                ax.text(heights[k], k, " inf", va="center", fontsize=8)
        ax.set_yticks(range(len(head)), names, fontsize=7)
        ax.invert_yaxis()
        ax.set_xlabel("unfairness")
        ax.set_title(spec.display, fontsize=10)
        fig.tight_layout()
        path = outdir / f"{basename}_top_{spec.id}.png"
        fig.savefig(path)
        plt.close(fig)
        written.append(path)

        top_entry = unfair[0]
        sub = top_entry.subgroup
        fig, ax = plt.subplots(figsize=(6.4, 4.2), dpi=120)
        for side, color in ((0, "#b04030"), (1, "#4878a8")):
            ecd = sub.ecd(side, "micro")
            xs = [0.0] + list(ecd.breakpoints)
            ys = [0.0] + list(ecd.values)
            xs.append(xs[-1] * 1.05 if xs[-1] > 0 else 1.0)
            ys.append(ys[-1])
            ax.step(xs, ys, where="post", color=color, label=f"'{labels[side]}'")
        if spec.budget is not None:
            ax.axvline(spec.budget, color="#777777", linestyle="--", linewidth=1, label="budget")
        if spec.phi is not None:
            ax.axhline(spec.phi, color="#777777", linestyle=":", linewidth=1, label="phi")
        ax.set_xlabel("cost")
        ax.set_ylabel("effectiveness")
        ax.set_ylim(-0.02, 1.02)
        ax.set_title(f"{_shorten(sub.predicate.describe())}\n{spec.display}", fontsize=9)
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = outdir / f"{basename}_ecd_{spec.id}.png"
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    return written


def _shorten(text: str, limit: int = 48) -> str:
    return text if len(text) <= limit else text[: limit - 3] + "..."


def write_report_files(
    report: AuditReport,
    outdir,
    basename: str = "audit",
    top: int = 10,
    details: int = 3,
    figures: bool = True,
) -> dict:
    """Write every report artifact under one directory; returns the paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    data = report_to_dict(report)
    json_path = outdir / f"{basename}.json"
    json_path.write_text(json.dumps(data, indent=2, allow_nan=False) + "\n", encoding="utf-8")
    text_path = outdir / f"{basename}.txt"
    text_path.write_text(render_text(data, top=top, details=details), encoding="utf-8")
    csv_path = outdir / f"{basename}_rankings.csv"
    write_rankings_csv(data, csv_path)
    paths = {"json": json_path, "text": text_path, "rankings": csv_path, "figures": []}
    if figures:
        paths["figures"] = render_figures(report, outdir, basename=basename)
    return paths
