"""Matplotlib summaries rendered next to the delimited report output.

Figures are derived from report tables only, use the Agg backend, and are
byte-deterministic for a given report, so they participate in the
reproducibility contract like every other report file.
"""

from __future__ import annotations

from pathlib import Path
from typing import Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .pipeline import Report

_CATEGORY_COLORS = {
    "omission": "#4c72b0",
    "hallucination": "#c44e52",
    "salience": "#dd8452",
}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _score_histogram(report: Report, out_dir: Path) -> list[Path]:
    rows = report.tables.get("multifact_scores", [])
    if not rows:
        return []
    layers = sorted({row["layer"] for row in rows})
    fig, axes = plt.subplots(1, len(layers), figsize=(5 * len(layers), 3.2), squeeze=False)
    for ax, layer in zip(axes[0], layers):
        scores = [float(row["score"]) for row in rows if row["layer"] == layer]
        ax.hist(scores, bins=10, range=(0, 100), color="#55a868", edgecolor="white")
        ax.set_title(f"MultiFactScore ({layer})")
        ax.set_xlabel("score")
        ax.set_ylabel("clauses")
    fig.tight_layout()
    return [_save(fig, out_dir / "multifact_scores.png")]


def _verifier_bars(report: Report, out_dir: Path) -> list[Path]:
    rows = report.tables.get("verifier_metrics", [])
    if not rows:
        return []
    layers = sorted({row["layer"] for row in rows})
    fig, axes = plt.subplots(1, len(layers), figsize=(5 * len(layers), 3.2), squeeze=False)
    for ax, layer in zip(axes[0], layers):
        groups = [r for r in rows if r["layer"] == layer]
        names = [r["group"] for r in groups]
        values = [100 * r["accuracy"] for r in groups]
        ax.bar(names, values, color="#4c72b0")
        ax.set_ylim(0, 100)
        ax.set_title(f"Verifier accuracy ({layer})")
        ax.set_ylabel("accuracy (%)")
        ax.tick_params(axis="x", rotation=30)
    fig.tight_layout()
    return [_save(fig, out_dir / "verifier_accuracy.png")]


def _decomposition_bars(report: Report, out_dir: Path) -> list[Path]:
    rows = report.tables.get("decomposition", [])
    if not rows:
        return []
    fig, ax = plt.subplots(figsize=(7, 0.6 * len(rows) + 1.8))
    labels = []
    for i, row in enumerate(rows):
        labels.append(f"{row['layer']}/{row['fact_type']}")
        left = 0.0
        for category in ("omission", "hallucination", "salience"):
            pct_text = row.get(f"{category}_pct", "--")
            if pct_text == "--":
                continue
            value = float(pct_text)
            ax.barh(i, value, left=left, color=_CATEGORY_COLORS[category])
            left += value
    ax.set_yticks(range(len(rows)))
    ax.set_yticklabels(labels)
    ax.invert_yaxis()
    ax.set_xlabel("% of errors")
    ax.set_title(f"Error decomposition ({rows[0]['eval_mode']})")
    handles = [plt.Rectangle((0, 0), 1, 1, color=c) for c in _CATEGORY_COLORS.values()]
    ax.legend(handles, list(_CATEGORY_COLORS), loc="lower right", fontsize=8)
    fig.tight_layout()
    return [_save(fig, out_dir / "error_decomposition.png")]


def render_figures(report: Report, out_dir: Union[str, Path]) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    written.extend(_score_histogram(report, out_dir))
    written.extend(_verifier_bars(report, out_dir))
    written.extend(_decomposition_bars(report, out_dir))
    return written
