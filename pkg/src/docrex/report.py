"""Rendering of evaluation results: tables, delimited files, and figures.

A report row is a plain dict with ``subset`` and ``system`` labels plus the
metric values from the evaluation module (fractions in [0, 1]).  Rows may
carry a ``sd`` dict with per-metric standard deviations (from runs over
several seeds) and the ``counts`` dict emitted alongside the metrics.  The
same rows drive every surface: an aligned plain-text table, a tab-separated
file, a JSON dump, and a grouped bar figure.

Metric files are byte-stable: JSON is written with sorted keys and no
timestamps, and the delimited writer uses a fixed column order, so repeated
runs with the same seed produce identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_METRICS = ("precision", "recall", "f1")
_HEADERS = {"precision": "Precision (%)", "recall": "Recall (%)", "f1": "F1 (%)"}
_COUNT_FIELDS = ("tp", "fp", "fn", "tn", "n")


def _require_rows(rows: Sequence[Mapping]) -> None:
    if not rows:
        raise ValueError("no report rows")
    for row in rows:
        for name in _METRICS:
            if name not in row:
                raise ValueError(f"report row missing {name!r}: {row!r}")


def _metric_cell(row: Mapping, name: str) -> str:
    text = f"{100.0 * float(row[name]):.2f}"
    sd = (row.get("sd") or {}).get(name)
    if sd is not None:
        text += f" ±{100.0 * float(sd):.2f}"
    return text


def format_metrics_table(rows: Sequence[Mapping]) -> str:
    """Aligned plain-text table: one row per (subset, system)."""
    _require_rows(rows)
    header = ["Subset", "System", *(_HEADERS[m] for m in _METRICS)]
    body = [
        [
            str(row.get("subset", "")),
            str(row.get("system", "")),
            *(_metric_cell(row, m) for m in _METRICS),
        ]
        for row in rows
    ]
    widths = [
        max(len(header[i]), *(len(line[i]) for line in body))
        for i in range(len(header))
    ]

    def render(cells: Sequence[str]) -> str:
        parts = [cells[0].ljust(widths[0]), cells[1].ljust(widths[1])]
        parts += [cells[i].rjust(widths[i]) for i in range(2, len(cells))]
        return "  ".join(parts).rstrip()

    rule = "  ".join("-" * w for w in widths)
    return "\n".join([render(header), rule, *(render(line) for line in body)])


def write_metrics_table(rows: Sequence[Mapping], path) -> Path:
    path = Path(path)
    path.write_text(format_metrics_table(rows) + "\n", encoding="utf-8")
    return path


def write_delimited(rows: Sequence[Mapping], path, delimiter: str = "\t") -> Path:
    """Fixed-column delimited dump of the report rows (counts flattened)."""
    _require_rows(rows)
    path = Path(path)
    fields = ["subset", "system", *_METRICS, *(f"sd_{m}" for m in _METRICS),
              *_COUNT_FIELDS]
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, delimiter=delimiter, lineterminator="\n")
        writer.writerow(fields)
        for row in rows:
            counts = row.get("counts") or {}
            sd = row.get("sd") or {}
            record = [row.get("subset", ""), row.get("system", "")]
            record += [repr(float(row[m])) for m in _METRICS]
            record += ["" if sd.get(m) is None else repr(float(sd[m]))
                       for m in _METRICS]
            record += ["" if counts.get(f) is None else counts[f]
                       for f in _COUNT_FIELDS]
            writer.writerow(record)
    return path


def write_metrics_json(payload, path) -> Path:
    """Deterministic JSON dump: sorted keys, two-space indent, no clock."""
    path = Path(path)
    path.write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return path


def _ordered_unique(values):
    seen = []
    for value in values:
        if value not in seen:
            seen.append(value)
    return seen


def metrics_figure(rows: Sequence[Mapping], path) -> Path:
    """Grouped bar chart: one panel per subset, one bar group per system."""
    _require_rows(rows)
    subsets = _ordered_unique(row.get("subset", "") for row in rows)
    fig, axes = plt.subplots(
        1, len(subsets), figsize=(1.0 + 4.0 * len(subsets), 3.6), squeeze=False
    )
    width = 0.26
    for ax, subset in zip(axes[0], subsets):
        group = [row for row in rows if row.get("subset", "") == subset]
        centers = range(len(group))
        for j, metric in enumerate(_METRICS):
            values = [100.0 * float(row[metric]) for row in group]
            errors = [100.0 * float((row.get("sd") or {}).get(metric) or 0.0)
                      for row in group]
            offsets = [i + (j - 1) * width for i in centers]
            ax.bar(
                offsets,
                values,
                width,
                yerr=errors if any(errors) else None,
                capsize=3,
                label=_HEADERS[metric],
            )
        ax.set_xticks(list(centers))
        ax.set_xticklabels(
            [str(row.get("system", "")) for row in group],
            rotation=15,
            ha="right",
        )
        ax.set_ylim(0, 105)
        ax.set_title(subset or "all")
        ax.grid(axis="y", alpha=0.3)
    axes[0][0].set_ylabel("%")
    axes[0][0].legend(fontsize="small")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def training_curve_figure(
    series: Mapping[str, Sequence[float]],
    path,
    ylabel: str = "value",
    xlabel: str = "iteration",
) -> Path:
    """Line chart of per-iteration values, one line per named series."""
    if not series:
        raise ValueError("no series to plot")
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    for name, values in series.items():
        ax.plot(range(len(values)), list(values), marker="o", label=str(name))
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3)
    ax.legend(fontsize="small")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_report(rows: Sequence[Mapping], outdir, stem: str = "metrics") -> dict:
    """Write every report surface for ``rows`` into ``outdir``.

    Returns a dict of the produced paths: text table, tab-separated values,
    JSON payload, and the bar figure.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    return {
        "table": write_metrics_table(rows, outdir / f"{stem}.txt"),
        "delimited": write_delimited(rows, outdir / f"{stem}.tsv"),
        "json": write_metrics_json({"rows": list(rows)}, outdir / f"{stem}.json"),
        "figure": metrics_figure(rows, outdir / f"{stem}.png"),
    }
