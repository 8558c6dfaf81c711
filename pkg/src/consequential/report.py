"""Deterministic CSV / JSON / SVG output for experiment reports.

Identical reports produce byte-identical files: floats are written with
``repr`` and SVGs are rendered with a fixed hash salt and no timestamp.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .experiments import ExperimentReport, FigureSpec, Table


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_table(path, table: Table, provenance: dict | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for key, value in (provenance or {}).items():
            fh.write(f"# {key}: {value}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.columns)
        for row in table.rows:
            w.writerow([_fmt(v) for v in row])


def read_table(path) -> Table:
    """Read a table written by :func:`write_table` (numbers come back as floats)."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    columns = tuple(next(reader))
    rows = []
    for row in reader:
        out = []
        for v in row:
            try:
                out.append(float(v))
            except ValueError:
                out.append(v)
        rows.append(tuple(out))
    return Table(columns, rows)


def plot_figure(path, table: Table, spec: FigureSpec) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "consequential", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5.0, 3.5))
        groups = [None] if spec.series is None else list(dict.fromkeys(table.column(spec.series).tolist()))
        for g in groups:
            sub = table if g is None else table.where(**{spec.series: g})
            x, y, s = (np.asarray(sub.column(c), dtype=float) for c in (spec.x, spec.y, spec.sem))
            order = np.argsort(x, kind="stable")
            x, y, s = x[order], y[order], s[order]
            finite = np.isfinite(x)
            label = None if g is None else f"{spec.series}={_fmt(g)}"
            ax.plot(x[finite], y[finite], marker="o", markersize=2.5, label=label)
            ax.fill_between(x[finite], (y - 1.96 * s)[finite], (y + 1.96 * s)[finite], alpha=0.25)
        ax.set_title(spec.title)
        ax.set_xlabel(spec.xlabel or spec.x)
        ax.set_ylabel(spec.ylabel or spec.y)
        if spec.series is not None:
            ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def write_report(report: ExperimentReport, out_dir, figures: bool = True) -> list[Path]:
    """Write every table, trained parameter set, trace and figure; return the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prov = report.provenance
    written = []
    for name, table in sorted(report.tables.items()):
        path = out / f"{name}.csv"
        write_table(path, table, prov)
        written.append(path)
    if report.params:
        (out / "params").mkdir(exist_ok=True)
        for name, params in sorted(report.params.items()):
            path = out / "params" / f"{name}.json"
            params.save(path)
            written.append(path)
    if report.traces:
        (out / "traces").mkdir(exist_ok=True)
        for name, trace in sorted(report.traces.items()):
            path = out / "traces" / f"{name}.csv"
            trace.to_csv(path)
            written.append(path)
    if figures:
        for name, spec in sorted(report.figures.items()):
            path = out / f"{name}.svg"
            plot_figure(path, report.tables[spec.table], spec)
            written.append(path)
    return written
