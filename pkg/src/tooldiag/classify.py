"""Rules mapping trace steps to taxonomy deviations and failed tasks to labels.

Everything here is a pure function of trace records plus the golden plan, so
the same code labels tasks online (inside the workflow) and offline (over an
archived trace).
"""

from __future__ import annotations

from dataclasses import replace
from typing import Any, Iterable, Mapping, Sequence

from .scenario import GoldenPlan, GroundTruth, PlanStage, Task, TaskInstance, oracle_final_state
from .taxonomy import (
    INFRASTRUCTURE,
    OTHER,
    ContractViolation,
    Deviation,
    ErrorCategory,
    Mechanism,
    ToolKind,
    category_of,
)
from .tools import InvoiceStore, Status, ToolOutput
from .trace import (
    ActionKind,
    AgentRole,
    DispatchOutcome,
    FinalDecision,
    Outcome,
    StepRecord,
    group_by_task,
)

_SEGMENT_ENDING = (ActionKind.TEXT, ActionKind.HANDOFF, ActionKind.FINAL_DECISION)
_REJECTION_MECHANISMS = {
    DispatchOutcome.REJECTED_NAME: Mechanism.BAD_NAME,
    DispatchOutcome.REJECTED_STRUCTURE: Mechanism.BAD_STRUCTURE,
    DispatchOutcome.REJECTED_VALUE: Mechanism.BAD_VALUE,
    DispatchOutcome.RUNTIME_ERROR: Mechanism.RUNTIME,
}


def classify_step_deviation(
    step: StepRecord, expected_stage: PlanStage, oracle_output: ToolOutput | None
) -> Deviation | None:
    """Label one step taken while ``expected_stage`` was the stage in play."""
    kind = step.action_kind
    mechanism: Mechanism | None = None
    if kind in _SEGMENT_ENDING:
        mechanism = Mechanism.OMISSION
    elif kind is ActionKind.FORCED_TERMINATION:
        mechanism = Mechanism.LOOP_TERMINATION
    elif kind is ActionKind.TOOL_CALL:
        outcome = step.dispatch_outcome
        if outcome in _REJECTION_MECHANISMS:
            mechanism = _REJECTION_MECHANISMS[outcome]
        elif outcome is DispatchOutcome.OK:
            if step.tool_name != expected_stage.tool.tool_name:
                return None
            if oracle_output is not None and step.tool_output != oracle_output:
                mechanism = Mechanism.OUTPUT_DIVERGENCE
    if mechanism is None:
        return None
    return Deviation(
        category_of(expected_stage.tool, mechanism.error_type), mechanism, step.step_index
    )


class StageTracker:
    """Walks a trace in order, deciding which plan stage each step is judged against.

    Tool calls that reached a registered tool are judged against the earliest
    unfulfilled stage for that tool (or the last such stage, for repeats).
    Calls to names missing from the agent's registry, and segment-ending
    messages, are judged against the agent's earliest unfulfilled stage.
    Forced termination is judged against the first unfulfilled stage overall.
    """

    def __init__(self, plan: GoldenPlan):
        self.plan = plan
        self.fulfilled = [False] * len(plan.stages)
        self.deviations: list[Deviation] = []

    def first_pending(self) -> int | None:
        return next((i for i, done in enumerate(self.fulfilled) if not done), None)

    def _pending_for(self, agent: AgentRole) -> int | None:
        owned = agent.owned_tools
        return next(
            (i for i, s in enumerate(self.plan.stages) if s.tool in owned and not self.fulfilled[i]),
            None,
        )

    def _stage_for_tool(self, tool: ToolKind) -> int | None:
        candidates = [i for i, s in enumerate(self.plan.stages) if s.tool is tool]
        pending = [i for i in candidates if not self.fulfilled[i]]
        if pending:
            return pending[0]
        return candidates[-1] if candidates else None

    def _stage_for(self, step: StepRecord) -> int | None:
        if step.action_kind is ActionKind.TOOL_CALL:
            tool = ToolKind.from_tool_name(step.tool_name)
            if step.dispatch_outcome is not DispatchOutcome.REJECTED_NAME and tool is not None:
                return self._stage_for_tool(tool)
            idx = self._pending_for(step.agent)
            return idx if idx is not None else self.first_pending()
        if step.action_kind in _SEGMENT_ENDING:
            return self._pending_for(step.agent)
        if step.action_kind is ActionKind.FORCED_TERMINATION:
            return self.first_pending()
        return None

    def observe(self, step: StepRecord) -> Deviation | None:
        idx = self._stage_for(step)
        if idx is None:
            return None
        stage = self.plan.stages[idx]
        deviation = classify_step_deviation(step, stage, stage.expected_output)
        if (
            step.action_kind is ActionKind.TOOL_CALL
            and step.dispatch_outcome is DispatchOutcome.OK
            and step.tool_name == stage.tool.tool_name
        ):
            self.fulfilled[idx] = True
        if deviation is not None:
            self.deviations.append(deviation)
        return deviation


def label_trace(trace: Sequence[StepRecord], plan: GoldenPlan) -> list[StepRecord]:
    """Return copies of ``trace`` with deviation/mechanism fields recomputed."""
    tracker = StageTracker(plan)
    out = []
    for step in trace:
        dev = tracker.observe(step)
        out.append(
            replace(
                step,
                deviation=dev.category.code if dev else None,
                mechanism=dev.mechanism.value if dev else None,
            )
        )
    return out


def primary_deviation(trace: Sequence[StepRecord], plan: GoldenPlan) -> Deviation | None:
    tracker = StageTracker(plan)
    for step in trace:
        dev = tracker.observe(step)
        if dev is not None:
            return dev
    return None


def final_decision_of(trace: Sequence[StepRecord]) -> FinalDecision:
    decision = FinalDecision.NONE
    for step in trace:
        if step.action_kind is ActionKind.FINAL_DECISION and step.agent is AgentRole.RECON:
            try:
                decision = FinalDecision(step.content)
            except ValueError:
                decision = FinalDecision.NONE
    return decision


def store_after(trace: Sequence[StepRecord], instance: TaskInstance) -> InvoiceStore:
    """Rebuild the final ledger from the snapshot plus acknowledged updates."""
    store = InvoiceStore.from_records(instance.store_snapshot)
    for step in trace:
        out = step.tool_output
        if (
            step.action_kind is ActionKind.TOOL_CALL
            and step.dispatch_outcome is DispatchOutcome.OK
            and out is not None
            and out.tool is ToolKind.DB_UPDATE
        ):
            ack = out.payload
            rec = store.records[ack["invoice_id"]]
            store.records[rec.invoice_id] = replace(
                rec, status=Status(ack["new_status"]), payment_id=ack.get("payment_id")
            )
    return store


def judge_outcome(
    store: InvoiceStore, decision: FinalDecision, terminated: bool,
    instance: TaskInstance, truth: GroundTruth,
) -> Outcome:
    if terminated:
        return Outcome.FAILURE
    if store.snapshot() != oracle_final_state(instance, truth).snapshot():
        return Outcome.FAILURE
    if decision.value != truth.expected_status.value:
        return Outcome.FAILURE
    return Outcome.SUCCESS


def replay_outcome(trace: Sequence[StepRecord], instance: TaskInstance, truth: GroundTruth) -> Outcome:
    terminated = bool(trace) and trace[-1].action_kind.terminal
    return judge_outcome(
        store_after(trace, instance), final_decision_of(trace), terminated, instance, truth
    )


def attribute_task_failure(
    trace: Sequence[StepRecord], instance: TaskInstance, truth: GroundTruth
) -> tuple[ErrorCategory | str, Deviation | None]:
    """Single label for a failed task: earliest deviation, else OTHER.

    A trace cut short by a transport failure is labelled INFRASTRUCTURE.
    Forced termination without an earlier deviation shows up as a
    LOOP_TERMINATION deviation on the termination record itself.
    """
    if replay_outcome(trace, instance, truth) is Outcome.SUCCESS:
        raise ContractViolation(f"{instance.task_id}: attribution requested for a successful task")
    if trace and trace[-1].action_kind is ActionKind.INFRASTRUCTURE_FAILURE:
        return INFRASTRUCTURE, None
    dev = primary_deviation(trace, truth.expected_plan)
    if dev is None:
        return OTHER, None
    return dev.category, dev


def label_of(attribution: ErrorCategory | str) -> str:
    return attribution.code if isinstance(attribution, ErrorCategory) else attribution


def classify_trace(records: Iterable[StepRecord], tasks: Mapping[str, Task]) -> list[dict[str, Any]]:
    """Offline labels for every task in a trace, in task-id order."""
    out = []
    for task_id, steps in sorted(group_by_task(records).items()):
        task = tasks.get(task_id)
        if task is None:
            raise ContractViolation(f"trace mentions {task_id}, which the dataset does not contain")
        steps.sort(key=lambda r: r.step_index)
        outcome = replay_outcome(steps, task.instance, task.truth)
        label = mechanism = None
        if outcome is Outcome.FAILURE:
            attribution, dev = attribute_task_failure(steps, task.instance, task.truth)
            label = label_of(attribution)
            mechanism = dev.mechanism.value if dev else None
        out.append({
            "task_id": task_id,
            "outcome": outcome.value,
            "primary_error": label,
            "primary_mechanism": mechanism,
        })
    return out
