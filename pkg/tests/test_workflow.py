import io
import json

import pytest

from tooldiag.backends import GOLDEN_STEPS, GoldenPolicy
from tooldiag.classify import (
    StageTracker,
    attribute_task_failure,
    classify_step_deviation,
    label_trace,
    replay_outcome,
    store_after,
)
from tooldiag.scenario import Modality, Variant, generate_dataset, oracle_final_state
from tooldiag.taxonomy import INFRASTRUCTURE, OTHER, ContractViolation
from tooldiag.trace import (
    ActionKind,
    AgentRole,
    DispatchOutcome,
    FinalDecision,
    Outcome,
    StepRecord,
    TraceWriter,
    read_trace,
    write_trace,
)
from tooldiag.workflow import (
    AgentAction,
    HarnessFault,
    InfrastructureError,
    new_conversation,
    run_task,
    step_agent,
)


@pytest.fixture(scope="module")
def tasks():
    ds = generate_dataset(3, 40)
    vision = [t for t in ds if t.modality is Modality.VISION]
    text = [t for t in ds if t.modality is Modality.TEXT]
    return vision, text


def _run(task, policy, **kw):
    return run_task(task.instance, task.truth, policy, **kw)


class Patched:
    """Golden policy with per-agent overrides."""

    def __init__(self, **overrides):
        self.golden = GoldenPolicy()
        self.overrides = {AgentRole(k): v for k, v in overrides.items()}

    def next_action(self, conv):
        fn = self.overrides.get(conv.agent)
        return fn(conv) if fn else self.golden.next_action(conv)


# -- golden runs ---------------------------------------------------------------

def test_golden_text_steps(tasks):
    for task in tasks[1]:
        result, records = _run(task, GoldenPolicy())
        assert result.outcome is Outcome.SUCCESS
        assert result.steps == GOLDEN_STEPS[Modality.TEXT] == len(records)
        assert [r.action_kind for r in records] == [
            ActionKind.HANDOFF, ActionKind.TOOL_CALL, ActionKind.TOOL_CALL, ActionKind.HANDOFF,
            ActionKind.FINAL_DECISION,
        ]
        assert result.ocr_f1 is None
        assert result.final_decision.value == task.truth.expected_status.value


def test_golden_vision_steps(tasks):
    for task in tasks[0]:
        result, records = _run(task, GoldenPolicy())
        assert result.outcome is Outcome.SUCCESS
        assert result.steps == GOLDEN_STEPS[Modality.VISION] == len(records)
        assert records[0].tool_name == "ocr_tool"
        assert result.ocr_f1 == 1.0


def test_golden_store_matches_oracle(tasks):
    for task in tasks[0][:5] + tasks[1][:5]:
        _, records = _run(task, GoldenPolicy())
        after = store_after(records, task.instance)
        assert after.records == oracle_final_state(task.instance, task.truth).records


def test_golden_needs_only_its_steps(tasks):
    vision = tasks[0][0]
    ok, _ = _run(vision, GoldenPolicy(), limit=GOLDEN_STEPS[Modality.VISION])
    assert ok.succeeded
    cut, records = _run(vision, GoldenPolicy(), limit=GOLDEN_STEPS[Modality.VISION] - 1)
    assert not cut.succeeded
    assert records[-1].action_kind is ActionKind.FORCED_TERMINATION


def test_limit_must_be_positive(tasks):
    with pytest.raises(ValueError):
        _run(tasks[1][0], GoldenPolicy(), limit=0)


def test_ownership(tasks):
    for task in tasks[0][:3]:
        _, records = _run(task, GoldenPolicy())
        for r in records:
            if r.tool_name == "ocr_tool":
                assert r.agent is AgentRole.EMAIL
            elif r.tool_name:
                assert r.agent is AgentRole.DATA_ENG


# -- deviations ------------------------------------------------------------------

def _loop_query(conv):
    note = json.loads(conv.handoff_note)
    return AgentAction.tool_call("db_query_tool", json.dumps({"invoice_id": note["invoice_id"]}))


def test_loop_hits_recursion_limit(tasks):
    for task in tasks[1][:5] + tasks[0][:5]:
        result, records = _run(task, Patched(DATA_ENG=_loop_query))
        assert result.steps == 25
        assert records[-1].action_kind is ActionKind.FORCED_TERMINATION
        assert sum(r.action_kind is ActionKind.FORCED_TERMINATION for r in records) == 1
        assert result.primary_error == "DB_UPDATE_TOOL_NOT_INITIALIZED"
        assert result.primary_mechanism == "LOOP_TERMINATION"


def test_custom_limit(tasks):
    result, _ = _run(tasks[1][0], Patched(DATA_ENG=_loop_query), limit=9)
    assert result.steps == 9


def test_text_instead_of_update_is_omission(tasks):
    def data_eng(conv):
        if conv.last_exchange is None:
            return GoldenPolicy().next_action(conv)
        return AgentAction.text("All good, the ledger matches.")

    result, records = _run(tasks[1][0], Patched(DATA_ENG=data_eng))
    assert result.primary_error == "DB_UPDATE_TOOL_NOT_INITIALIZED"
    assert result.primary_mechanism == "OMISSION"
    assert records[2].deviation == "DB_UPDATE_TOOL_NOT_INITIALIZED"


def test_handoff_without_calls_is_omission(tasks):
    result, _ = _run(tasks[1][0], Patched(DATA_ENG=lambda c: AgentAction.handoff("{}")))
    assert result.primary_error == "DB_QUERY_TOOL_NOT_INITIALIZED"


def test_tool_from_other_agent_is_rejected_by_name(tasks):
    # EMAIL does not own the query tool, so the call never reaches it
    def email(conv):
        if conv.last_exchange is None:
            return AgentAction.tool_call("db_query_tool", '{"invoice_id": "INV-2024-0001"}')
        return GoldenPolicy().next_action(conv)

    result, records = _run(tasks[0][0], Patched(EMAIL=email))
    assert records[0].dispatch_outcome is DispatchOutcome.REJECTED_NAME
    assert result.primary_error == "OCR_TOOL_NOT_INITIALIZED"
    assert result.primary_mechanism == "BAD_NAME"


def test_policy_garbage_becomes_text(tasks):
    conv = new_conversation(AgentRole.RECON, tasks[1][0].instance, "{}")
    assert step_agent(AgentRole.RECON, conv, type("P", (), {"next_action": lambda s, c: 42})()).kind \
        is ActionKind.TEXT
    bad = AgentAction(ActionKind.FINAL_DECISION, content="MAYBE")
    assert step_agent(AgentRole.RECON, conv, type("P", (), {"next_action": lambda s, c: bad})()).kind \
        is ActionKind.TEXT
    forced = AgentAction(ActionKind.FORCED_TERMINATION)
    assert step_agent(AgentRole.RECON, conv, type("P", (), {"next_action": lambda s, c: forced})()).kind \
        is ActionKind.TEXT


def test_wrong_decision_is_other(tasks):
    task = next(t for t in tasks[1] if t.truth.variant is Variant.MATCH)
    result, _ = _run(task, Patched(RECON=lambda c: AgentAction.decision("DISPUTED")))
    assert result.outcome is Outcome.FAILURE
    assert result.primary_error == OTHER
    assert result.primary_mechanism is None


def test_decision_from_non_recon_is_just_a_segment_end(tasks):
    result, records = _run(tasks[1][0], Patched(EMAIL=lambda c: AgentAction.decision("RECONCILED")))
    assert records[0].action_kind is ActionKind.FINAL_DECISION
    assert result.outcome is Outcome.FAILURE


def test_infrastructure_error(tasks):
    def boom(conv):
        raise InfrastructureError("connection refused")

    result, records = _run(tasks[1][0], Patched(DATA_ENG=boom))
    assert records[-1].action_kind is ActionKind.INFRASTRUCTURE_FAILURE
    assert result.primary_error == INFRASTRUCTURE


@pytest.mark.parametrize("tool, mechanism, code", [
    ("OCR", "RUNTIME", "OCR_TOOL_ERROR"),
    ("OCR", "CORRUPT_RESULT", "OCR_TOOL_RESULT_MISMATCH"),
    ("DB_QUERY", "RUNTIME", "DB_QUERY_TOOL_ERROR"),
    ("DB_QUERY", "CORRUPT_RESULT", "DB_QUERY_TOOL_RESULT_MISMATCH"),
    ("DB_UPDATE", "RUNTIME", "DB_UPDATE_TOOL_ERROR"),
])
def test_harness_faults(tasks, tool, mechanism, code):
    from tooldiag.taxonomy import ToolKind

    for task in tasks[0]:
        result, _ = _run(task, GoldenPolicy(), harness_faults=[HarnessFault(ToolKind(tool), mechanism, 5)])
        assert result.primary_error == code


def test_unsupported_harness_fault(tasks):
    from tooldiag.taxonomy import ToolKind

    with pytest.raises(ValueError):
        _run(tasks[0][0], GoldenPolicy(), harness_faults=[HarnessFault(ToolKind.DB_UPDATE, "CORRUPT_RESULT")])


# -- classification helpers -------------------------------------------------------

def test_step_deviation_matches_output(tasks):
    task = tasks[1][0]
    _, records = _run(task, GoldenPolicy())
    query = records[1]
    stage = task.truth.expected_plan.stages[0]
    assert classify_step_deviation(query, stage, stage.expected_output) is None
    assert classify_step_deviation(query, stage, None) is None


def test_label_trace_is_idempotent(tasks):
    task = tasks[1][0]
    _, records = _run(task, Patched(DATA_ENG=_loop_query))
    relabelled = label_trace(records, task.truth.expected_plan)
    assert [r.deviation for r in relabelled] == [r.deviation for r in records]


def test_attribution_on_success_is_a_contract_violation(tasks):
    task = tasks[1][0]
    _, records = _run(task, GoldenPolicy())
    assert replay_outcome(records, task.instance, task.truth) is Outcome.SUCCESS
    with pytest.raises(ContractViolation):
        attribute_task_failure(records, task.instance, task.truth)


def test_stage_tracker_marks_fulfilment(tasks):
    task = tasks[0][0]
    _, records = _run(task, GoldenPolicy())
    tracker = StageTracker(task.truth.expected_plan)
    for r in records:
        tracker.observe(r)
    assert tracker.fulfilled == [True, True, True]
    assert tracker.first_pending() is None


# -- traces ----------------------------------------------------------------------

def test_trace_roundtrip(tmp_path, tasks):
    task = tasks[0][0]
    _, records = _run(task, GoldenPolicy())
    path = tmp_path / "t.jsonl"
    with open(path, "w") as fh:
        write_trace(fh, records, header={"run_id": "r", "started_at": "now", "limit": 25})
    header, back = read_trace(path)
    assert header["run_id"] == "r"
    assert back == records
    assert len(path.read_text().splitlines()) == GOLDEN_STEPS[Modality.VISION] + 1


def test_canonical_trace_drops_wall_clock(tasks):
    task = tasks[1][0]
    fake = iter(range(0, 10_000, 7))
    _, a = _run(task, GoldenPolicy(), clock=lambda: next(fake) / 1000)
    _, b = _run(task, GoldenPolicy())
    buf_a, buf_b = io.StringIO(), io.StringIO()
    write_trace(buf_a, a, canonical=True, header={"run_id": "x", "started_at": "1"})
    write_trace(buf_b, b, canonical=True, header={"run_id": "y", "started_at": "2"})
    assert buf_a.getvalue() == buf_b.getvalue()
    assert "wall_ms" not in buf_a.getvalue()


def test_writer_rejects_out_of_order():
    writer = TraceWriter(io.StringIO())
    writer.write(StepRecord("T1", 0, AgentRole.EMAIL, ActionKind.HANDOFF, content="{}"))
    writer.write(StepRecord("T2", 0, AgentRole.EMAIL, ActionKind.HANDOFF, content="{}"))
    with pytest.raises(ContractViolation):
        writer.write(StepRecord("T1", 0, AgentRole.DATA_ENG, ActionKind.TEXT, content=""))


def test_final_decision_values(tasks):
    task = tasks[1][0]
    result, _ = _run(task, Patched(RECON=lambda c: AgentAction.text("unsure")))
    assert result.final_decision is FinalDecision.NONE
    # RECON owns no stage, so its silence is not an omission
    assert result.primary_error == OTHER
    assert result.primary_mechanism is None
