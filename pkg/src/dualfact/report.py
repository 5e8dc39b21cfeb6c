"""Report emission: structured records, CSV tables, and text layouts.

Formats:

* ``records`` -- ``report.json``, the full structured report (the source of
  truth: every number in any other format is recoverable from it);
* ``csv``     -- one file per table under ``tables/``;
* ``text``    -- ``report.txt`` with fixed-width tables mirroring the
  benchmark table layouts, including dashes for undefined cells.

Emission is deterministic: same report object, same bytes. Matplotlib
figures are rendered separately (see ``figures``) and are deterministic too.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable, Sequence, Union

from .pipeline import Report

# Preferred column order per table; anything unlisted is appended sorted.
_COLUMN_ORDER = {
    "dataset_stats": [
        "split",
        "videos",
        "clips",
        "via",
        "conceptual_facts",
        "contextual_facts",
    ],
    "validation": ["clause_id", "rule_id", "severity", "message"],
    "verifier_metrics": [
        "layer",
        "group",
        "accuracy",
        "precision",
        "recall",
        "f1",
        "tp",
        "fp",
        "fn",
        "tn",
        "n",
    ],
    "per_video_accuracy": ["layer", "video_id", "accuracy"],
    "multifact_scores": [
        "layer",
        "clause_id",
        "video_id",
        "supported",
        "total",
        "score",
    ],
    "multifact_summary": [
        "layer",
        "fact_set",
        "clauses",
        "skipped",
        "supported",
        "facts",
        "pooled_score",
        "mean_clause_score",
    ],
    "slot_metrics": ["layer", "slot", "precision", "recall", "f1", "tp", "fp", "fn"],
    "decomposition": [
        "layer",
        "fact_type",
        "eval_mode",
        "omission_pct",
        "hallucination_pct",
        "salience_pct",
        "omission_count",
        "hallucination_count",
        "salience_count",
        "total_errors",
    ],
    "grounding_eval": ["metric", "correct", "total", "value_pct"],
    "correlations": ["layer", "method", "coefficient", "n", "dropped"],
    "agreement": ["annotator_a", "annotator_b", "items", "kappa"],
}


def _columns(name: str, rows: Sequence[dict]) -> list[str]:
    keys: list[str] = []
    for row in rows:
        for key in row:
            if key not in keys:
                keys.append(key)
    preferred = [c for c in _COLUMN_ORDER.get(name, []) if c in keys]
    rest = sorted(k for k in keys if k not in preferred)
    return preferred + rest


def _cell_text(value) -> str:
    if value is None:
        return "--"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def render_text_table(name: str, rows: Sequence[dict]) -> str:
    if not rows:
        return f"== {name} ==\n(empty)\n"
    columns = _columns(name, rows)
    grid = [columns] + [[_cell_text(row.get(c)) for c in columns] for row in rows]
    widths = [max(len(line[i]) for line in grid) for i in range(len(columns))]
    out = io.StringIO()
    out.write(f"== {name} ==\n")
    for line_no, line in enumerate(grid):
        out.write(
            "  ".join(text.ljust(widths[i]) for i, text in enumerate(line)).rstrip()
        )
        out.write("\n")
        if line_no == 0:
            out.write("  ".join("-" * w for w in widths).rstrip())
            out.write("\n")
    return out.getvalue()


def emit_tables(
    report: Report,
    output_dir: Union[str, Path],
    formats: Iterable[str] = ("records", "csv", "text"),
    figures: bool = False,
) -> list[Path]:
    """Write the report in the requested formats; returns written paths."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    formats = tuple(formats)
    unknown = set(formats) - {"records", "csv", "text"}
    if unknown:
        raise ValueError(f"unknown report formats: {sorted(unknown)}")

    if "records" in formats:
        path = output_dir / "report.json"
        with path.open("w", encoding="utf-8") as fh:
            json.dump(report.to_json(), fh, indent=2, sort_keys=True, ensure_ascii=False)
            fh.write("\n")
        written.append(path)

    if "csv" in formats:
        tables_dir = output_dir / "tables"
        tables_dir.mkdir(exist_ok=True)
        for name in sorted(report.tables):
            rows = report.tables[name]
            path = tables_dir / f"{name}.csv"
            columns = _columns(name, rows) if rows else []
            with path.open("w", encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(columns)
                for row in rows:
                    writer.writerow([_cell_text(row.get(c)) for c in columns])
            written.append(path)

    if "text" in formats:
        path = output_dir / "report.txt"
        with path.open("w", encoding="utf-8") as fh:
            fh.write("dualfact report\n")
            fh.write(f"config_hash: {report.metadata.get('config_hash', '')}\n")
            fh.write(f"version: {report.metadata.get('version', '')}\n")
            fh.write(f"dataset: {report.metadata.get('dataset', '')}\n")
            fh.write(f"seed: {report.metadata.get('seed', '')}\n\n")
            for name in sorted(report.tables):
                fh.write(render_text_table(name, report.tables[name]))
                fh.write("\n")
            if report.clause_errors:
                fh.write(render_text_table("clause_errors", report.clause_errors))
                fh.write("\n")
            if report.exclusions:
                fh.write(render_text_table("exclusions", report.exclusions))
                fh.write("\n")
        written.append(path)

    if figures:
        from .figures import render_figures

        written.extend(render_figures(report, output_dir / "figures"))
    return written
