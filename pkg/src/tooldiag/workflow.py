"""Three-agent reconciliation pipeline: EMAIL -> DATA_ENG -> RECON.

Each agent keeps calling the policy until it produces something other than a
tool call. TEXT or HANDOFF closes the agent's segment and its content is
passed on to the next agent; RECON closes with FINAL_DECISION. Every policy
invocation is one step, and the run is cut off once ``limit`` steps have been
spent.
"""

from __future__ import annotations

import json
import random
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol, Sequence

from .classify import StageTracker, attribute_task_failure, judge_outcome, label_of
from .metrics import ocr_f1
from .scenario import GroundTruth, Modality, TaskInstance, Variant
from .taxonomy import ContractViolation, ToolKind
from .tools import (
    FailureKind,
    FaultFlag,
    InvoiceStore,
    ToolEnvironment,
    ToolOutput,
    ToolRejection,
    ToolRuntimeFault,
    ToolSchema,
    ValidationFailure,
    alter_one_digit,
    corrupt_document,
    inject_tool_fault,
    make_registry,
    truncate_document,
    validate_call,
)
from .trace import (
    PIPELINE,
    ActionKind,
    AgentRole,
    DispatchOutcome,
    FinalDecision,
    Outcome,
    StepRecord,
    TaskResult,
)

DEFAULT_LIMIT = 25


class InfrastructureError(Exception):
    """The policy could not be reached (transport failure, timeout)."""


class HarnessCrash(RuntimeError):
    """Unexpected exception inside the harness while running a task."""


SYSTEM_PROMPTS = {
    AgentRole.EMAIL: (
        "You are the Email Agent in an invoice reconciliation team. Read the incoming email. "
        "If an invoice is attached as a document, you must call ocr_tool with its attachment id "
        "to read it. When you know the invoice details, reply with 'HANDOFF:' followed by a JSON "
        "object with keys invoice_id, vendor, amount_minor (integer, minor currency units), "
        "currency and invoice_date."
    ),
    AgentRole.DATA_ENG: (
        "You are the Data Engineering Agent. Using the invoice details you are handed, call "
        "db_query_tool to fetch the ledger record, compare its amount_minor with the invoice "
        "amount, then call db_update_tool setting status RECONCILED if they match or DISPUTED "
        "if they differ. Finally reply with 'HANDOFF:' followed by a JSON object with keys "
        "invoice_id, invoice_amount_minor, ledger_amount_minor and status."
    ),
    AgentRole.RECON: (
        "You are the Reconciliation Agent. Review the findings you are handed and make the final "
        "decision. Reply with exactly 'FINAL_DECISION: RECONCILED' if the invoice amount matches "
        "the ledger, or 'FINAL_DECISION: DISPUTED' otherwise."
    ),
}


@dataclass(frozen=True)
class AgentAction:
    kind: ActionKind
    tool_name: str | None = None
    arguments: str | None = None
    content: str | None = None

    @classmethod
    def tool_call(cls, name: str, arguments: str) -> AgentAction:
        return cls(ActionKind.TOOL_CALL, tool_name=name, arguments=arguments)

    @classmethod
    def text(cls, content: str) -> AgentAction:
        return cls(ActionKind.TEXT, content=content)

    @classmethod
    def handoff(cls, content: str) -> AgentAction:
        return cls(ActionKind.HANDOFF, content=content)

    @classmethod
    def decision(cls, value: str) -> AgentAction:
        return cls(ActionKind.FINAL_DECISION, content=value)


@dataclass(frozen=True)
class ToolExchange:
    tool_name: str
    raw_arguments: str
    outcome: DispatchOutcome
    output: ToolOutput | None
    error: str | None


@dataclass
class ConversationState:
    """What one agent has seen so far in the current task."""

    task_id: str
    agent: AgentRole
    modality: Modality
    tools: tuple[ToolSchema, ...]
    messages: list[dict[str, Any]] = field(default_factory=list)
    email_text: str | None = None
    document_id: str | None = None
    handoff_note: str | None = None
    exchanges: list[ToolExchange] = field(default_factory=list)

    @property
    def last_exchange(self) -> ToolExchange | None:
        return self.exchanges[-1] if self.exchanges else None


class AgentPolicy(Protocol):
    def next_action(self, conversation: ConversationState) -> AgentAction: ...


@dataclass(frozen=True)
class HarnessFault:
    """Pre-task damage requested by a fault policy: ``RUNTIME`` or ``CORRUPT_RESULT``."""

    tool: ToolKind
    mechanism: str
    seed: int = 0


def apply_harness_fault(env: ToolEnvironment, instance: TaskInstance, truth: GroundTruth,
                        fault: HarnessFault) -> None:
    rng = random.Random(fault.seed)
    target = truth.target_invoice_id
    ledger_amount = env.store.records[target].amount_minor
    # On MISMATCH tasks a corrupted amount is made to agree with the other
    # side, so the corruption always flips the reconciliation decision.
    mismatch = truth.variant is Variant.MISMATCH
    if fault.tool is ToolKind.OCR:
        if instance.document is None:
            return
        doc_id = instance.document.document_id
        blob = env.documents[doc_id]
        if fault.mechanism == "RUNTIME":
            env.documents[doc_id] = truncate_document(blob)
        elif fault.mechanism == "CORRUPT_RESULT":
            env.documents[doc_id] = corrupt_document(blob, rng, ledger_amount if mismatch else None)
        else:
            raise ValueError(f"unsupported harness fault {fault}")
    elif fault.tool is ToolKind.DB_QUERY and fault.mechanism == "RUNTIME":
        inject_tool_fault(env.store, target, FaultFlag.RAISE_ON_QUERY)
    elif fault.tool is ToolKind.DB_QUERY and fault.mechanism == "CORRUPT_RESULT":
        env.tampered_queries[target] = (
            truth.expected_amount_minor if mismatch else alter_one_digit(ledger_amount, rng)
        )
    elif fault.tool is ToolKind.DB_UPDATE and fault.mechanism == "RUNTIME":
        inject_tool_fault(env.store, target, FaultFlag.RAISE_ON_UPDATE)
    else:
        raise ValueError(f"unsupported harness fault {fault}")


def task_environment(instance: TaskInstance) -> ToolEnvironment:
    docs = {instance.document.document_id: instance.document} if instance.document else {}
    return ToolEnvironment(InvoiceStore.from_records(instance.store_snapshot), docs)


def new_conversation(agent: AgentRole, instance: TaskInstance, note: str | None) -> ConversationState:
    conv = ConversationState(
        task_id=instance.task_id,
        agent=agent,
        modality=instance.modality,
        tools=tuple(make_registry(agent.owned_tools).values()),
        handoff_note=note,
    )
    conv.messages.append({"role": "system", "content": SYSTEM_PROMPTS[agent]})
    if agent is AgentRole.EMAIL:
        if instance.modality is Modality.VISION:
            conv.document_id = instance.document.document_id
            conv.messages.append({
                "role": "user",
                "content": (
                    "New email received with a scanned invoice attached "
                    f"(attachment id: {conv.document_id}). The attachment can only be read "
                    "with the OCR tool."
                ),
            })
        else:
            conv.email_text = instance.email_text
            conv.messages.append({"role": "user", "content": f"New email received:\n\n{instance.email_text}"})
    else:
        previous = PIPELINE[PIPELINE.index(agent) - 1]
        conv.messages.append(
            {"role": "user", "content": f"Handoff from the {previous.value} agent:\n{note or ''}"}
        )
    return conv


def step_agent(agent: AgentRole, conversation: ConversationState, policy: AgentPolicy) -> AgentAction:
    """One policy turn. Output is passed through untouched unless it fits no action kind."""
    action = policy.next_action(conversation)
    if not isinstance(action, AgentAction):
        return AgentAction.text(str(action))
    if action.kind is ActionKind.TOOL_CALL and not isinstance(action.tool_name, str):
        return AgentAction.text(action.content or "")
    if action.kind is ActionKind.FINAL_DECISION and action.content not in (
        FinalDecision.RECONCILED.value, FinalDecision.DISPUTED.value,
    ):
        return AgentAction.text(action.content or "")
    if action.kind.terminal:
        return AgentAction.text(action.content or "")
    return action


def _dispatch(env: ToolEnvironment, agent: AgentRole, action: AgentAction
              ) -> tuple[DispatchOutcome, ToolOutput | None, str | None]:
    checked = validate_call(make_registry(agent.owned_tools), action.tool_name, action.arguments)
    if isinstance(checked, ValidationFailure):
        if checked.kind is FailureKind.UNKNOWN_NAME:
            return DispatchOutcome.REJECTED_NAME, None, checked.detail
        return DispatchOutcome.REJECTED_STRUCTURE, None, f"{checked.reason.value}: {checked.detail}"
    try:
        return DispatchOutcome.OK, env.dispatch(checked), None
    except ToolRejection as exc:
        return DispatchOutcome.REJECTED_VALUE, None, str(exc)
    except ToolRuntimeFault as exc:
        return DispatchOutcome.RUNTIME_ERROR, None, str(exc)


def _ms(seconds: float) -> int:
    return max(0, int(round(seconds * 1000)))


def run_task(
    instance: TaskInstance,
    truth: GroundTruth,
    policy: AgentPolicy,
    limit: int = DEFAULT_LIMIT,
    harness_faults: Sequence[HarnessFault] = (),
    clock: Callable[[], float] = time.perf_counter,
) -> tuple[TaskResult, list[StepRecord]]:
    if limit < 1:
        raise ValueError("limit must be at least 1")
    env = task_environment(instance)
    for fault in harness_faults:
        apply_harness_fault(env, instance, truth, fault)

    tracker = StageTracker(truth.expected_plan)
    records: list[StepRecord] = []
    steps = 0
    decision = FinalDecision.NONE
    terminated = False
    note: str | None = None
    started = clock()

    def emit(record: StepRecord) -> None:
        dev = tracker.observe(record)
        if dev is not None:
            record.deviation = dev.category.code
            record.mechanism = dev.mechanism.value
        records.append(record)

    for agent in PIPELINE:
        conv = new_conversation(agent, instance, note)
        while True:
            if steps >= limit:
                emit(StepRecord(instance.task_id, len(records), agent, ActionKind.FORCED_TERMINATION))
                terminated = True
                break
            t0 = clock()
            steps += 1
            try:
                action = step_agent(agent, conv, policy)
            except InfrastructureError as exc:
                emit(StepRecord(instance.task_id, len(records), agent,
                                ActionKind.INFRASTRUCTURE_FAILURE, detail=str(exc),
                                wall_ms=_ms(clock() - t0)))
                terminated = True
                break

            index = len(records)
            if action.kind is ActionKind.TOOL_CALL:
                outcome, output, error = _dispatch(env, agent, action)
                emit(StepRecord(
                    instance.task_id, index, agent, ActionKind.TOOL_CALL,
                    tool_name=action.tool_name, raw_arguments=action.arguments,
                    dispatch_outcome=outcome, tool_output=output, detail=error,
                    wall_ms=_ms(clock() - t0),
                ))
                call_id = f"call_{index}"
                conv.exchanges.append(ToolExchange(action.tool_name, action.arguments, outcome, output, error))
                conv.messages.append({
                    "role": "assistant", "content": None,
                    "tool_call": {"id": call_id, "name": action.tool_name, "arguments": action.arguments},
                })
                conv.messages.append({
                    "role": "tool", "tool_call_id": call_id, "name": action.tool_name,
                    "content": json.dumps(output.payload, sort_keys=True) if output else f"ERROR ({outcome.value}): {error}",
                })
                continue

            emit(StepRecord(instance.task_id, index, agent, action.kind, content=action.content,
                            wall_ms=_ms(clock() - t0)))
            conv.messages.append({"role": "assistant", "content": action.content})
            if action.kind is ActionKind.FINAL_DECISION and agent is AgentRole.RECON:
                decision = FinalDecision(action.content)
            note = action.content
            break
        if terminated:
            break

    elapsed = _ms(clock() - started)
    outcome = judge_outcome(env.store, decision, terminated, instance, truth)
    primary = mechanism = None
    if outcome is Outcome.FAILURE:
        attribution, dev = attribute_task_failure(records, instance, truth)
        primary = label_of(attribution)
        mechanism = dev.mechanism.value if dev else None

    f1 = None
    if instance.modality is Modality.VISION:
        extracted = next(
            (r.tool_output.payload for r in records
             if r.dispatch_outcome is DispatchOutcome.OK and r.tool_output is not None
             and r.tool_output.tool is ToolKind.OCR),
            {},
        )
        f1 = ocr_f1(extracted, truth.expected_fields)

    if steps < 1:
        raise ContractViolation("a task must take at least one step")
    result = TaskResult(
        task_id=instance.task_id,
        modality=instance.modality.value,
        outcome=outcome,
        steps=steps,
        elapsed_ms=elapsed,
        final_decision=decision,
        primary_error=primary,
        primary_mechanism=mechanism,
        ocr_f1=f1,
    )
    return result, records
