"""Report rows, deterministic CSV, and JSON learning summaries."""

import json

import numpy as np
import pytest

from gridforge.errors import ParameterError
from gridforge.learn import LearnReport
from gridforge.reports import (
    CSV_COLUMNS,
    ReportRow,
    learn_report_to_json,
    read_csv,
    rows_to_csv,
    write_csv,
    write_json,
)

ROWS = [
    ReportRow("bench", "FP4", "t5", 16, 125000, 13.8e-3, 5.2e-5),
    ReportRow("bench", "INT4", "normal", 16, 125000, 7.6e-3, 1.1e-5),
]


def test_row_validation():
    with pytest.raises(ParameterError):
        ReportRow("bench", "FP4", "t5", 0, 1, 1e-3, 0.0)
    with pytest.raises(ParameterError):
        ReportRow("bench", "FP4", "t5", 16, -1, 1e-3, 0.0)
    with pytest.raises(ParameterError):
        ReportRow("bench", "FP4", "t5", 16, 1, float("nan"), 0.0)


def test_csv_byte_determinism_and_roundtrip(tmp_path):
    text = rows_to_csv(ROWS)
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    assert text == rows_to_csv(ROWS)

    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv(p1, ROWS)
    write_csv(p2, ROWS)
    assert p1.read_bytes() == p2.read_bytes()

    back = read_csv(p1)
    assert back == ROWS  # repr round-trips floats exactly


def test_csv_header_rejected(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ParameterError, match="header"):
        read_csv(p)


def test_learn_report_json(tmp_path):
    rep = LearnReport(
        objective_trace=[3.0, 2.0, 1.5],
        assignments_final=np.array([0, 1, 1, 0, 1], dtype=np.uint8),
        converged=True,
        snap_mse_delta=0.04,
    )
    doc = learn_report_to_json(rep)
    assert doc["iterations"] == 2
    assert doc["converged"] is True
    assert doc["assignment_counts"] == [2, 3]
    assert doc["snap_mse_delta"] == pytest.approx(0.04)

    out = tmp_path / "rep.json"
    write_json(out, doc)
    assert json.loads(out.read_text()) == doc
    # stable key order and trailing newline for diff-friendly artifacts
    assert out.read_text().endswith("\n")
    write_json(tmp_path / "rep2.json", doc)
    assert (tmp_path / "rep2.json").read_bytes() == out.read_bytes()
