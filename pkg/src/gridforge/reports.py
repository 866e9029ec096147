"""Experiment report rows, deterministic CSV emission, and JSON summaries.

Every experiment reports through the same seven-column CSV schema --
{experiment, family, distribution, g, n, mse, stderr} -- one row per
table cell.  Float fields use shortest round-trip formatting so a fixed
seed yields byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

__all__ = ["CSV_COLUMNS", "ReportRow", "rows_to_csv", "write_csv", "read_csv",
           "learn_report_to_json", "write_json"]

CSV_COLUMNS = ("experiment", "family", "distribution", "g", "n", "mse", "stderr")


@dataclass(frozen=True)
class ReportRow:
    experiment: str
    family: str
    distribution: str
    g: int
    n: int
    mse: float
    stderr: float

    def __post_init__(self) -> None:
        if self.g < 1 or self.n < 0:
            raise ParameterError(f"bad row geometry g={self.g} n={self.n}")
        if not (np.isfinite(self.mse) and np.isfinite(self.stderr)):
            raise ParameterError("mse and stderr must be finite")


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow(
            [r.experiment, r.family, r.distribution, r.g, r.n, repr(float(r.mse)),
             repr(float(r.stderr))]
        )
    return buf.getvalue()


def write_csv(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(rows_to_csv(rows))


def read_csv(path) -> list:
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = tuple(next(reader))
        if header != CSV_COLUMNS:
            raise ParameterError(f"unexpected CSV header {header}")
        return [
            ReportRow(row[0], row[1], row[2], int(row[3]), int(row[4]),
                      float(row[5]), float(row[6]))
            for row in reader
        ]


def learn_report_to_json(report, grids=None) -> dict:
    """JSON-ready training summary: trace, convergence, snap cost,
    per-grid assignment counts (never the raw per-block array)."""
    assign = np.asarray(report.assignments_final)
    counts = np.bincount(assign, minlength=int(assign.max()) + 1 if assign.size else 1)
    doc = {
        "objective_trace": [float(v) for v in report.objective_trace],
        "iterations": max(len(report.objective_trace) - 1, 0),
        "converged": bool(report.converged),
        "snap_mse_delta": (
            None if report.snap_mse_delta is None else float(report.snap_mse_delta)
        ),
        "assignment_counts": [int(c) for c in counts],
    }
    if grids is not None:
        doc["grids"] = [g.name for g in grids]
    return doc


def write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
