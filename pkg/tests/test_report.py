import csv
import io
import json

import pytest

from tooldiag.backends import FaultBackend, FaultProfile, GoldenBackend
from tooldiag.metrics import ErrorMatrix, RunSummary, compute_summary
from tooldiag.report import (
    MATRIX_CSV_COLUMNS,
    ArchiveError,
    format_cell,
    load_archive,
    render_reports,
    split_columns,
)
from tooldiag.runner import run_evaluation
from tooldiag.scenario import Modality, generate_dataset
from tooldiag.taxonomy import CATEGORY_CODES, INFRASTRUCTURE, OTHER
from tooldiag.trace import FinalDecision, Outcome, TaskResult


def test_cell_format():
    assert format_cell(756, 990) == "756 (76.36%)"
    assert format_cell(0, 990) == "0 (0.00%)"
    assert format_cell(7, 990) == "7 (0.71%)"
    assert format_cell(990, 990) == "990 (100.00%)"


def test_columns():
    assert split_columns("vision") == [*CATEGORY_CODES, OTHER, INFRASTRUCTURE]
    assert split_columns("text") == [
        "DB_QUERY_TOOL_NOT_INITIALIZED", "DB_QUERY_TOOL_ARGS_MISMATCH",
        "DB_UPDATE_TOOL_NOT_INITIALIZED", "DB_UPDATE_TOOL_ARGS_MISMATCH", OTHER, INFRASTRUCTURE,
    ]


@pytest.fixture(scope="module")
def golden_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("golden")
    run = run_evaluation(generate_dataset(8, 20), GoldenBackend(), out_dir=out, run_id="g-1")
    return out, run


def test_golden_markdown(golden_run):
    _, run = golden_run
    md = render_reports([run.summary], "md")
    row = next(line for line in md.splitlines() if line.startswith("| golden"))
    assert "| 100.0 |" in row
    assert md.count("## ") == 3
    error_rows = [line for line in md.splitlines() if line.startswith("| golden")][1:]
    assert len(error_rows) == 2
    for line in error_rows:
        cells = [c.strip() for c in line.strip("|").split("|")][2:]
        assert cells and all(c == "0 (0.00%)" for c in cells)
    assert "OCR columns are omitted" in md


def test_csv_matches_markdown(golden_run):
    _, run = golden_run
    summaries = [run.summary]
    md = render_reports(summaries, "md")
    rows = list(csv.DictReader(io.StringIO(render_reports(summaries, "csv"))))
    assert len(rows) == 5 + 14 + 6
    for row in rows:
        assert f"| {row['value']} |" in md


def test_render_needs_input():
    with pytest.raises(ValueError):
        render_reports([], "md")
    with pytest.raises(ValueError):
        render_reports([object()], "html")


def test_archive_files_share_run_id(golden_run):
    out, run = golden_run
    archive = load_archive(out)
    assert archive.run_id == "g-1" == archive.header["run_id"]
    assert archive.results == run.results
    assert archive.records == run.traces
    matrix = list(csv.DictReader(open(out / "matrix.csv")))
    assert tuple(matrix[0]) == MATRIX_CSV_COLUMNS
    assert {r["run_id"] for r in matrix} == {"g-1"}
    assert len(matrix) == 2 * 14
    summary = json.loads((out / "summary.json").read_text())
    assert summary["run_id"] == "g-1"


def test_report_reproducible_from_archive(golden_run):
    out, run = golden_run
    archive = load_archive(out)
    assert render_reports([archive.summary], "md") == (out / "report.md").read_text()


def test_archive_mismatch_detected(golden_run, tmp_path):
    out, _ = golden_run
    for name in ("trace.jsonl", "results.jsonl", "summary.json"):
        (tmp_path / name).write_text((out / name).read_text())
    summary = json.loads((tmp_path / "summary.json").read_text())
    summary["run_id"] = "other"
    (tmp_path / "summary.json").write_text(json.dumps(summary))
    with pytest.raises(ArchiveError):
        load_archive(tmp_path)
    with pytest.raises(ArchiveError):
        load_archive(tmp_path / "missing")


def test_text_note_flags_hidden_columns():
    results = [TaskResult("T1", "TEXT", Outcome.FAILURE, 5, 1, FinalDecision.NONE, "DB_QUERY_TOOL_ERROR")]
    summary = RunSummary("r", {"kind": "x", "label": "m"}, 1, 25, compute_summary(results), None,
                         ErrorMatrix.from_results(results))
    md = render_reports([summary], "md")
    assert "1 failure(s) fall in columns not shown here" in md
    assert "No tasks of this kind" in md


def test_multi_run_report():
    ds = generate_dataset(8, 20).subset(Modality.TEXT)
    a = run_evaluation(ds, GoldenBackend("model-a")).summary
    b = run_evaluation(ds, FaultBackend(FaultProfile.from_dict({"DATA_ENG.DB_UPDATE": {"p_omit": 1.0}}),
                                        "model-b")).summary
    md = render_reports([a, b], "md")
    row_b = [line for line in md.splitlines() if line.startswith("| model-b")]
    assert "| 0.0 |" in row_b[0]
    assert "10 (100.00%)" in row_b[-1]
