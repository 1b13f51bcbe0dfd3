"""Run archives on disk and the overall / per-split error tables."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Any, Sequence

from .metrics import ErrorMatrix, RunSummary
from .taxonomy import ALL_CATEGORIES, INFRASTRUCTURE, OTHER, ErrorType, ToolKind
from .trace import StepRecord, TaskResult, dumps_line, read_trace, write_trace

if TYPE_CHECKING:
    from .runner import EvaluationRun

TRACE_FILE = "trace.jsonl"
RESULTS_FILE = "results.jsonl"
SUMMARY_FILE = "summary.json"
MATRIX_FILE = "matrix.csv"
REPORT_FILE = "report.md"
RESULTS_HEADER_TYPE = "results_header"

MATRIX_CSV_COLUMNS = (
    "run_id", "split", "platform_label", "model_label", "category_code", "count", "rate_percent",
)
TEXT_TABLE_NOTE = (
    "OCR columns are omitted: text tasks carry no document, so no OCR call is planned. "
    "DB error and result-mismatch columns are shown in matrix.csv only."
)
TEXT_TABLE_TYPES = (ErrorType.NOT_INITIALIZED, ErrorType.ARGS_MISMATCH)


class ReportFormat(str, Enum):
    MARKDOWN = "md"
    CSV = "csv"


class ArchiveError(ValueError):
    pass


def _fmt_rate(count: int, denominator: int) -> str:
    return f"{100.0 * count / denominator:.2f}"


def format_cell(count: int, denominator: int) -> str:
    return f"{count} ({_fmt_rate(count, denominator)}%)"


def _short_header(code: str) -> str:
    if code in (OTHER, INFRASTRUCTURE):
        return {OTHER: "Other", INFRASTRUCTURE: "Infra"}[code]
    tool, _, rest = code.partition("_TOOL_")
    return f"{tool} {rest}"


def split_columns(split: str) -> list[str]:
    codes = [
        c.code for c in ALL_CATEGORIES
        if split == "vision" or (c.tool is not ToolKind.OCR and c.error_type in TEXT_TABLE_TYPES)
    ]
    return codes + [OTHER, INFRASTRUCTURE]


def _count(matrix: ErrorMatrix, code: str) -> int:
    if code == OTHER:
        return matrix.other
    if code == INFRASTRUCTURE:
        return matrix.infrastructure
    return matrix.counts[code]


def overall_cells(s: RunSummary) -> dict[str, str]:
    st = s.stats
    return {
        "Tasks": str(st.total),
        "SR (%)": f"{st.sr_percent:.1f}",
        "Time (s)": f"{st.time_mean_s:.2f} ± {st.time_std_s:.2f}",
        "Steps": f"{st.steps_mean:.1f} ± {st.steps_std:.1f}",
        "OCR F1": "n/a" if st.ocr_f1_mean is None else f"{st.ocr_f1_mean:.3f}",
    }


OVERALL_COLUMNS = ("Tasks", "SR (%)", "Time (s)", "Steps", "OCR F1")


def _md_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> list[str]:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(row) + " |" for row in rows]
    return lines


def _split_rows(summaries: Sequence[RunSummary], split: str) -> list[tuple[RunSummary, ErrorMatrix]]:
    return [(s, s.matrices()[split]) for s in summaries if split in s.matrices()]


def render_markdown(summaries: Sequence[RunSummary]) -> str:
    lines = ["## Overall performance", ""]
    lines += _md_table(
        ("Model", "Platform", *OVERALL_COLUMNS),
        [(s.model_label, s.platform_label, *overall_cells(s).values()) for s in summaries],
    )
    for split, title in (("vision", "Error counts, vision tasks"), ("text", "Error counts, text tasks")):
        cols = split_columns(split)
        rows = _split_rows(summaries, split)
        lines += ["", f"## {title}", ""]
        if not rows:
            lines.append("No tasks of this kind in the selected runs.")
            continue
        lines += _md_table(
            ("Model", "Platform", *(_short_header(c) for c in cols)),
            [(s.model_label, s.platform_label, *(format_cell(_count(m, c), m.denominator) for c in cols))
             for s, m in rows],
        )
        if split == "text":
            hidden = sum(m.counts[code] for _, m in rows for code in m.counts if code not in cols)
            note = TEXT_TABLE_NOTE
            if hidden:
                note += f" {hidden} failure(s) fall in columns not shown here."
            lines += ["", note]
    return "\n".join(lines) + "\n"


def render_csv(summaries: Sequence[RunSummary]) -> str:
    """Long-format CSV; every value is the exact string shown in the markdown cell."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("table", "model_label", "platform_label", "column", "value"))
    for s in summaries:
        for col, value in overall_cells(s).items():
            w.writerow(("overall", s.model_label, s.platform_label, col, value))
    for split in ("vision", "text"):
        for s, m in _split_rows(summaries, split):
            for code in split_columns(split):
                w.writerow((split, s.model_label, s.platform_label, code,
                            format_cell(_count(m, code), m.denominator)))
    return buf.getvalue()


def render_reports(summaries: Sequence[RunSummary], fmt: ReportFormat | str = ReportFormat.MARKDOWN) -> str:
    if not summaries:
        raise ValueError("nothing to report")
    fmt = ReportFormat(fmt)
    return render_markdown(summaries) if fmt is ReportFormat.MARKDOWN else render_csv(summaries)


def matrix_csv(summary: RunSummary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MATRIX_CSV_COLUMNS)
    for split, matrix in summary.matrices().items():
        for code in [c.code for c in ALL_CATEGORIES] + [OTHER, INFRASTRUCTURE]:
            n = _count(matrix, code)
            w.writerow((summary.run_id, split, summary.platform_label, summary.model_label,
                        code, n, _fmt_rate(n, matrix.denominator)))
    return buf.getvalue()


@dataclass
class RunArchive:
    directory: Path
    header: dict[str, Any]
    summary: RunSummary
    results: list[TaskResult]
    records: list[StepRecord]

    @property
    def run_id(self) -> str:
        return self.summary.run_id


def write_archive(directory: str | Path, run: EvaluationRun) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / TRACE_FILE, "w", encoding="utf-8") as fh:
        write_trace(fh, run.traces, header=run.header)
    with open(out / RESULTS_FILE, "w", encoding="utf-8") as fh:
        fh.write(dumps_line({"type": RESULTS_HEADER_TYPE, "run_id": run.run_id}) + "\n")
        for r in run.results:
            fh.write(dumps_line(r.to_dict()) + "\n")
    (out / SUMMARY_FILE).write_text(
        json.dumps(run.summary.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (out / MATRIX_FILE).write_text(matrix_csv(run.summary), encoding="utf-8")
    (out / REPORT_FILE).write_text(render_markdown([run.summary]), encoding="utf-8")
    return out


def read_results(path: str | Path) -> tuple[str | None, list[TaskResult]]:
    run_id = None
    results = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            if obj.get("type") == RESULTS_HEADER_TYPE:
                run_id = obj["run_id"]
            else:
                results.append(TaskResult.from_dict(obj))
    return run_id, results


def read_summary(directory: str | Path) -> RunSummary:
    path = Path(directory) / SUMMARY_FILE
    if not path.is_file():
        raise ArchiveError(f"{directory}: no {SUMMARY_FILE}")
    return RunSummary.from_dict(json.loads(path.read_text(encoding="utf-8")))


def load_archive(directory: str | Path) -> RunArchive:
    root = Path(directory)
    for name in (TRACE_FILE, RESULTS_FILE, SUMMARY_FILE):
        if not (root / name).is_file():
            raise ArchiveError(f"{root}: missing {name}")
    header, records = read_trace(root / TRACE_FILE)
    results_run_id, results = read_results(root / RESULTS_FILE)
    summary = read_summary(root)
    ids = {summary.run_id, results_run_id, (header or {}).get("run_id")}
    if len(ids) != 1:
        raise ArchiveError(f"{root}: files disagree on run_id: {sorted(map(str, ids))}")
    return RunArchive(root, header or {}, summary, results, records)
