"""CSV and markdown output for a :class:`ResultTable`."""
from __future__ import annotations

import csv
import io
import os
from typing import Dict

from .benchmark import ResultTable


class ReportError(OSError):
    pass


def csv_text(table: ResultTable) -> str:
    """Per-bag rows, then one ``summary`` row per method.

    The summary row holds the means in the metric columns and the standard
    deviations in the ``<metric>_std`` columns, which are empty on bag rows.
    """
    if not table.methods:
        raise ValueError("empty result table")
    metrics = list(table.metrics)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "bag"] + metrics + [f"{k}_std" for k in metrics])
    for method, bag, vals in table.rows():
        w.writerow([method, bag] + [repr(vals[k]) for k in metrics] + [""] * len(metrics))
    for method, stats in table.summary().items():
        w.writerow([method, "summary"] + [repr(stats[k][0]) for k in metrics]
                   + [repr(stats[k][1]) for k in metrics])
    return buf.getvalue()


def markdown_text(table: ResultTable) -> str:
    """Mean +- std per method, sorted by mean RAE (by AE when RAE is absent)."""
    if not table.methods:
        raise ValueError("empty result table")
    key = "RAE" if "RAE" in table.metrics else table.metrics[0]
    summ = table.summary()
    order = sorted(table.methods, key=lambda m: (summ[m][key][0], m))
    lines = ["| method | " + " | ".join(table.metrics) + " |",
             "|---|" + "---|" * len(table.metrics)]
    for m in order:
        cells = [f"{summ[m][k][0]:.5f} ± {summ[m][k][1]:.5f}" for k in table.metrics]
        lines.append(f"| {m} | " + " | ".join(cells) + " |")
    for m, tb in table.failures.items():
        last = tb.strip().splitlines()[-1] if tb.strip() else "failed"
        lines.append(f"| {m} | " + " | ".join(["failed"] * len(table.metrics)) + f" |  <!-- {last} -->")
    return "\n".join(lines) + "\n"


def report(table: ResultTable, fmt: str, out) -> str:
    """Write ``table`` to ``out`` as ``csv`` or ``markdown``; returns the text."""
    fmt = fmt.lower()
    if fmt == "csv":
        text = csv_text(table)
    elif fmt in ("markdown", "md"):
        text = markdown_text(table)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    try:
        parent = os.path.dirname(os.path.abspath(out))
        os.makedirs(parent, exist_ok=True)
        with open(out, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise ReportError(f"cannot write {out}: {exc}") from exc
    return text


def sweep_csv_text(tables: Dict[int, ResultTable]) -> str:
    """One row per (bin count, method) with mean/std of every metric."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    metrics = None
    for nb, table in sorted(tables.items()):
        if metrics is None:
            metrics = list(table.metrics)
            w.writerow(["n_bins", "method"] + [f"{k}_{s}" for k in metrics for s in ("mean", "std")])
        for m, stats in table.summary().items():
            w.writerow([nb, m] + [repr(v) for k in metrics for v in stats[k]])
        for m in table.failures:
            w.writerow([nb, m] + ["nan"] * (2 * len(metrics)))
    return buf.getvalue()
