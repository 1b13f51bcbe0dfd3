"""Replay recorded agent actions from a trace file."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

from ..scenario import TaskInstance
from ..trace import ActionKind, StepRecord, group_by_task, read_trace
from ..workflow import AgentAction, ConversationState
from .base import BackendDescriptor


class ReplayError(ValueError):
    """The recorded script cannot drive the requested task."""


def actions_from_trace(records: Iterable[StepRecord]) -> list[AgentAction]:
    actions = []
    for rec in records:
        if rec.action_kind is ActionKind.TOOL_CALL:
            actions.append(AgentAction.tool_call(rec.tool_name, rec.raw_arguments))
        elif not rec.action_kind.terminal:
            actions.append(AgentAction(rec.action_kind, content=rec.content))
    return actions


class ReplayPolicy:
    """Returns the recorded actions in order; an exhausted script answers with empty TEXT."""

    def __init__(self, task_id: str, script: Sequence[AgentAction]):
        self.task_id = task_id
        self._script = list(script)
        self._cursor = 0

    def bind(self, instance: TaskInstance) -> ReplayPolicy:
        if instance.task_id != self.task_id:
            raise ReplayError(f"script recorded for {self.task_id}, not {instance.task_id}")
        return self

    def next_action(self, conv: ConversationState) -> AgentAction:
        if conv.task_id != self.task_id:
            raise ReplayError(f"script recorded for {self.task_id}, asked to drive {conv.task_id}")
        if self._cursor >= len(self._script):
            return AgentAction.text("")
        action = self._script[self._cursor]
        self._cursor += 1
        return action


class ReplayBackend:
    def __init__(self, scripts: dict[str, list[AgentAction]], label: str = "replay"):
        self.scripts = scripts
        self.descriptor = BackendDescriptor(kind="replay", label=label)

    @classmethod
    def from_trace(cls, path: str | Path, label: str | None = None) -> ReplayBackend:
        _, records = read_trace(path)
        scripts = {tid: actions_from_trace(recs) for tid, recs in group_by_task(records).items()}
        return cls(scripts, label or f"replay:{Path(path).name}")

    def for_task(self, instance: TaskInstance) -> ReplayPolicy:
        if instance.task_id not in self.scripts:
            raise ReplayError(f"no recorded script for task {instance.task_id}")
        return ReplayPolicy(instance.task_id, self.scripts[instance.task_id])
