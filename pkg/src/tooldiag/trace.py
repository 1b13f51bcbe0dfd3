"""Trace records and the JSON Lines trace format."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, fields
from enum import Enum
from pathlib import Path
from typing import IO, Any, Iterable, Iterator

from .taxonomy import ContractViolation, ToolKind
from .tools import ToolOutput

TRACE_HEADER_TYPE = "run_header"
# Stripped by canonical serialization so two runs can be compared byte-for-byte.
VOLATILE_RECORD_KEYS = ("wall_ms",)
VOLATILE_HEADER_KEYS = ("run_id", "started_at")


class AgentRole(str, Enum):
    EMAIL = "EMAIL"
    DATA_ENG = "DATA_ENG"
    RECON = "RECON"

    @property
    def owned_tools(self) -> tuple[ToolKind, ...]:
        return _OWNERSHIP[self]


_OWNERSHIP = {
    AgentRole.EMAIL: (ToolKind.OCR,),
    AgentRole.DATA_ENG: (ToolKind.DB_QUERY, ToolKind.DB_UPDATE),
    AgentRole.RECON: (),
}
PIPELINE = (AgentRole.EMAIL, AgentRole.DATA_ENG, AgentRole.RECON)


def owner_of(tool: ToolKind) -> AgentRole:
    return next(role for role in PIPELINE if tool in role.owned_tools)


class ActionKind(str, Enum):
    TOOL_CALL = "TOOL_CALL"
    TEXT = "TEXT"
    HANDOFF = "HANDOFF"
    FINAL_DECISION = "FINAL_DECISION"
    FORCED_TERMINATION = "FORCED_TERMINATION"
    INFRASTRUCTURE_FAILURE = "INFRASTRUCTURE_FAILURE"

    @property
    def terminal(self) -> bool:
        return self in (ActionKind.FORCED_TERMINATION, ActionKind.INFRASTRUCTURE_FAILURE)


class DispatchOutcome(str, Enum):
    OK = "OK"
    REJECTED_NAME = "REJECTED_NAME"
    REJECTED_STRUCTURE = "REJECTED_STRUCTURE"
    REJECTED_VALUE = "REJECTED_VALUE"
    RUNTIME_ERROR = "RUNTIME_ERROR"


class Outcome(str, Enum):
    SUCCESS = "SUCCESS"
    FAILURE = "FAILURE"


class FinalDecision(str, Enum):
    RECONCILED = "RECONCILED"
    DISPUTED = "DISPUTED"
    NONE = "NONE"


@dataclass
class StepRecord:
    task_id: str
    step_index: int
    agent: AgentRole
    action_kind: ActionKind
    tool_name: str | None = None
    raw_arguments: str | None = None
    dispatch_outcome: DispatchOutcome | None = None
    tool_output: ToolOutput | None = None
    content: str | None = None
    detail: str | None = None
    deviation: str | None = None
    mechanism: str | None = None
    wall_ms: int = 0

    def __post_init__(self) -> None:
        if (self.action_kind is ActionKind.TOOL_CALL) != (self.tool_name is not None):
            raise ContractViolation("tool_name must be present exactly on TOOL_CALL records")

    def to_dict(self, canonical: bool = False) -> dict[str, Any]:
        d: dict[str, Any] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Enum):
                value = value.value
            elif isinstance(value, ToolOutput):
                value = value.to_dict()
            d[f.name] = value
        if canonical:
            for key in VOLATILE_RECORD_KEYS:
                d.pop(key, None)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> StepRecord:
        return cls(
            task_id=d["task_id"],
            step_index=d["step_index"],
            agent=AgentRole(d["agent"]),
            action_kind=ActionKind(d["action_kind"]),
            tool_name=d.get("tool_name"),
            raw_arguments=d.get("raw_arguments"),
            dispatch_outcome=DispatchOutcome(d["dispatch_outcome"]) if d.get("dispatch_outcome") else None,
            tool_output=ToolOutput.from_dict(d["tool_output"]) if d.get("tool_output") else None,
            content=d.get("content"),
            detail=d.get("detail"),
            deviation=d.get("deviation"),
            mechanism=d.get("mechanism"),
            wall_ms=d.get("wall_ms", 0),
        )


@dataclass
class TaskResult:
    task_id: str
    modality: str
    outcome: Outcome
    steps: int
    elapsed_ms: int
    final_decision: FinalDecision
    primary_error: str | None = None
    primary_mechanism: str | None = None
    ocr_f1: float | None = None

    def __post_init__(self) -> None:
        if self.outcome is Outcome.SUCCESS and self.primary_error is not None:
            raise ContractViolation("successful task cannot carry a primary error")

    @property
    def succeeded(self) -> bool:
        return self.outcome is Outcome.SUCCESS

    def to_dict(self, canonical: bool = False) -> dict[str, Any]:
        d = {
            "task_id": self.task_id,
            "modality": self.modality,
            "outcome": self.outcome.value,
            "primary_error": self.primary_error,
            "primary_mechanism": self.primary_mechanism,
            "steps": self.steps,
            "elapsed_ms": self.elapsed_ms,
            "ocr_f1": self.ocr_f1,
            "final_decision": self.final_decision.value,
        }
        if canonical:
            d.pop("elapsed_ms")
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> TaskResult:
        return cls(
            task_id=d["task_id"],
            modality=d["modality"],
            outcome=Outcome(d["outcome"]),
            steps=d["steps"],
            elapsed_ms=d["elapsed_ms"],
            final_decision=FinalDecision(d["final_decision"]),
            primary_error=d.get("primary_error"),
            primary_mechanism=d.get("primary_mechanism"),
            ocr_f1=d.get("ocr_f1"),
        )


def dumps_line(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


class TraceWriter:
    """Append-only JSONL writer; one line per record, written under a lock."""

    def __init__(self, sink: IO[str], canonical: bool = False):
        self._sink = sink
        self._canonical = canonical
        self._lock = threading.Lock()
        self._last_index: dict[str, int] = {}

    def write_header(self, header: dict[str, Any]) -> None:
        h = {"type": TRACE_HEADER_TYPE, **header}
        if self._canonical:
            for key in VOLATILE_HEADER_KEYS:
                h.pop(key, None)
        self._emit(h)

    def write(self, record: StepRecord) -> None:
        with self._lock:
            last = self._last_index.get(record.task_id, -1)
            if record.step_index <= last:
                raise ContractViolation(
                    f"{record.task_id}: step_index {record.step_index} after {last}"
                )
            self._last_index[record.task_id] = record.step_index
            self._sink.write(dumps_line(record.to_dict(self._canonical)) + "\n")
            self._sink.flush()

    def _emit(self, obj: dict[str, Any]) -> None:
        with self._lock:
            self._sink.write(dumps_line(obj) + "\n")
            self._sink.flush()


def write_trace(sink: IO[str], records: Iterable[StepRecord], canonical: bool = False,
                header: dict[str, Any] | None = None) -> None:
    writer = TraceWriter(sink, canonical)
    if header is not None:
        writer.write_header(header)
    for record in records:
        writer.write(record)


def read_trace(path: str | Path) -> tuple[dict[str, Any] | None, list[StepRecord]]:
    header = None
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            if obj.get("type") == TRACE_HEADER_TYPE:
                header = obj
            else:
                records.append(StepRecord.from_dict(obj))
    return header, records


def group_by_task(records: Iterable[StepRecord]) -> dict[str, list[StepRecord]]:
    grouped: dict[str, list[StepRecord]] = {}
    for rec in records:
        grouped.setdefault(rec.task_id, []).append(rec)
    return grouped


def iter_canonical_lines(path: str | Path) -> Iterator[str]:
    header, records = read_trace(path)
    if header is not None:
        yield dumps_line({k: v for k, v in header.items() if k not in VOLATILE_HEADER_KEYS})
    for rec in records:
        yield dumps_line(rec.to_dict(canonical=True))
