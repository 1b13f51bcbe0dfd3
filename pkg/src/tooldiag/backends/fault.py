"""Fault-injection wrapper around the golden policy.

Before a task starts, one categorical draw per configured stage decides which
mechanism (if any) fires there. Policy-side mechanisms rewrite the first call
to that stage's tool; RUNTIME and CORRUPT_RESULT (except for updates, where
the wrong-but-valid status is a policy choice) become harness faults applied
to the task's private tool environment.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

from ..scenario import TaskInstance
from ..taxonomy import ToolKind
from ..trace import ActionKind, AgentRole
from ..workflow import AgentAction, AgentPolicy, ConversationState, HarnessFault
from .base import BackendDescriptor
from .golden import GoldenPolicy


class FaultConfigError(ValueError):
    pass


class FaultMechanism(str, Enum):
    OMIT = "OMIT"
    BAD_NAME = "BAD_NAME"
    BAD_STRUCTURE = "BAD_STRUCTURE"
    BAD_VALUE = "BAD_VALUE"
    RUNTIME = "RUNTIME"
    CORRUPT_RESULT = "CORRUPT_RESULT"
    LOOP = "LOOP"


# Field order of FaultEntry; also the order of the cumulative draw.
PROBABILITY_FIELDS = (
    "p_omit", "p_bad_name", "p_bad_structure", "p_bad_value",
    "p_runtime", "p_corrupt_result", "p_loop",
)
_FIELD_MECHANISM = dict(zip(PROBABILITY_FIELDS, FaultMechanism))

RENAMES = {
    ToolKind.DB_QUERY: "database_query",
    ToolKind.DB_UPDATE: "update_db",
    ToolKind.OCR: "read_document",
}
HALLUCINATED_FIELD = "vendor_tax_code"
BAD_INVOICE_ID = "INV-NOPE"
BAD_DOCUMENT_ID = "DOC-NOPE"
STRUCTURE_VARIANTS = ("drop_required", "retype", "extra_field")


@dataclass(frozen=True)
class FaultEntry:
    p_omit: float = 0.0
    p_bad_name: float = 0.0
    p_bad_structure: float = 0.0
    p_bad_value: float = 0.0
    p_runtime: float = 0.0
    p_corrupt_result: float = 0.0
    p_loop: float = 0.0

    def __post_init__(self) -> None:
        for name in PROBABILITY_FIELDS:
            p = getattr(self, name)
            if not isinstance(p, (int, float)) or math.isnan(p) or not 0.0 <= p <= 1.0:
                raise FaultConfigError(f"{name}={p!r} is outside [0, 1]")
        if self.total > 1.0 + 1e-9:
            raise FaultConfigError(f"probabilities sum to {self.total:.6f} > 1")

    @property
    def total(self) -> float:
        return sum(getattr(self, n) for n in PROBABILITY_FIELDS)

    def draw(self, u: float) -> tuple[FaultMechanism | None, int]:
        """Map a uniform draw to a mechanism (None = conformant) and a structure variant."""
        lo = 0.0
        for name in PROBABILITY_FIELDS:
            p = getattr(self, name)
            if u < lo + p:
                variant = 0
                if name == "p_bad_structure":
                    variant = min(int((u - lo) / p * len(STRUCTURE_VARIANTS)), len(STRUCTURE_VARIANTS) - 1)
                return _FIELD_MECHANISM[name], variant
            lo += p
        return None, 0


@dataclass(frozen=True)
class FaultProfile:
    entries: Mapping[tuple[AgentRole, ToolKind], FaultEntry]
    rng_seed: int = 0

    def __post_init__(self) -> None:
        for agent, tool in self.entries:
            if tool not in agent.owned_tools:
                raise FaultConfigError(f"{agent.value} does not own {tool.value}")

    @classmethod
    def single(cls, agent: AgentRole, tool: ToolKind, rng_seed: int = 0, **probabilities: float) -> FaultProfile:
        return cls({(agent, tool): FaultEntry(**probabilities)}, rng_seed)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> FaultProfile:
        seed = data.get("rng_seed", 0)
        if not isinstance(seed, int):
            raise FaultConfigError("rng_seed must be an integer")
        entries = {}
        for key, value in data.items():
            if key == "rng_seed":
                continue
            agent_name, _, tool_name = key.partition(".")
            try:
                stage = (AgentRole(agent_name), ToolKind(tool_name))
            except ValueError:
                raise FaultConfigError(f"bad stage key {key!r}, expected AGENT.TOOL") from None
            unknown = set(value) - set(PROBABILITY_FIELDS)
            if unknown:
                raise FaultConfigError(f"{key}: unknown fields {sorted(unknown)}")
            entries[stage] = FaultEntry(**value)
        return cls(entries, seed)

    @classmethod
    def read(cls, path: str | Path) -> FaultProfile:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"rng_seed": self.rng_seed}
        for (agent, tool), entry in sorted(self.entries.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)):
            out[f"{agent.value}.{tool.value}"] = {
                n: getattr(entry, n) for n in PROBABILITY_FIELDS if getattr(entry, n)
            }
        return out


def stage_seed(rng_seed: int, task_seed: int, agent: AgentRole, tool: ToolKind) -> int:
    key = f"{rng_seed}|{task_seed}|{agent.value}.{tool.value}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "big")


@dataclass(frozen=True)
class PlannedFault:
    mechanism: FaultMechanism
    variant: int
    seed: int


def plan_faults(profile: FaultProfile, instance: TaskInstance) -> dict[tuple[AgentRole, ToolKind], PlannedFault]:
    plan = {}
    for (agent, tool), entry in profile.entries.items():
        rng = random.Random(stage_seed(profile.rng_seed, instance.seed, agent, tool))
        mechanism, variant = entry.draw(rng.random())
        if mechanism is not None:
            plan[(agent, tool)] = PlannedFault(mechanism, variant, rng.getrandbits(64))
    return plan


def _malform(tool: ToolKind, arguments: str, variant: int) -> str:
    args = json.loads(arguments)
    kind = STRUCTURE_VARIANTS[variant]
    if kind == "drop_required":
        required = {
            ToolKind.OCR: "document_id", ToolKind.DB_QUERY: "invoice_id", ToolKind.DB_UPDATE: "status",
        }[tool]
        args.pop(required, None)
    elif kind == "retype":
        # id sent as a JSON number instead of a string
        key = "document_id" if tool is ToolKind.OCR else "invoice_id"
        digits = "".join(ch for ch in str(args[key]) if ch.isdigit())
        args[key] = int(digits) if digits else 0
    else:
        args[HALLUCINATED_FIELD] = "VT-0000000"
    return json.dumps(args, sort_keys=True)


def _with_bad_value(tool: ToolKind, arguments: str) -> str:
    args = json.loads(arguments)
    if tool is ToolKind.OCR:
        args["document_id"] = BAD_DOCUMENT_ID
    else:
        args["invoice_id"] = BAD_INVOICE_ID
    return json.dumps(args, sort_keys=True)


def _flip_status(arguments: str) -> str:
    args = json.loads(arguments)
    args["status"] = "DISPUTED" if args.get("status") == "RECONCILED" else "RECONCILED"
    return json.dumps(args, sort_keys=True)


def omission_text(conv: ConversationState, tool: ToolKind) -> str:
    if tool is ToolKind.OCR:
        return "The attachment looks like a standard supplier invoice. Forwarding the email for processing."
    try:
        note = json.loads(conv.handoff_note or "")
    except ValueError:
        note = {}
    invoice_id = note.get("invoice_id", "the invoice") if isinstance(note, dict) else "the invoice"
    amount = note.get("amount_minor") if isinstance(note, dict) else None
    if tool is ToolKind.DB_QUERY:
        shown = f"{amount // 100:,}.{amount % 100:02d}" if isinstance(amount, int) else "as stated"
        return (
            f"Based on the invoice information provided, the payment amount is {shown} "
            f"for invoice ID {invoice_id}."
        )
    return f"The ledger entry for {invoice_id} has been reviewed and matches the invoice; no further action needed."


class FaultPolicy:
    def __init__(self, inner: AgentPolicy, plan: Mapping[tuple[AgentRole, ToolKind], PlannedFault]):
        self.inner = inner
        self.plan = dict(plan)
        self._fired: set[tuple[AgentRole, ToolKind]] = set()
        self._looping: dict[AgentRole, AgentAction] = {}
        self.harness_faults = tuple(
            HarnessFault(tool, fault.mechanism.value, fault.seed)
            for (agent, tool), fault in sorted(self.plan.items(), key=lambda kv: kv[0][1].value)
            if fault.mechanism is FaultMechanism.RUNTIME
            or (fault.mechanism is FaultMechanism.CORRUPT_RESULT and tool is not ToolKind.DB_UPDATE)
        )

    def next_action(self, conv: ConversationState) -> AgentAction:
        if conv.agent in self._looping:
            return self._looping[conv.agent]
        action = self.inner.next_action(conv)
        if action.kind is not ActionKind.TOOL_CALL:
            return action
        tool = ToolKind.from_tool_name(action.tool_name)
        key = (conv.agent, tool)
        fault = self.plan.get(key)
        if fault is None or key in self._fired:
            return action
        self._fired.add(key)

        m = fault.mechanism
        if m is FaultMechanism.OMIT:
            return AgentAction.text(omission_text(conv, tool))
        if m is FaultMechanism.BAD_NAME:
            return AgentAction.tool_call(RENAMES[tool], action.arguments)
        if m is FaultMechanism.BAD_STRUCTURE:
            return AgentAction.tool_call(action.tool_name, _malform(tool, action.arguments, fault.variant))
        if m is FaultMechanism.BAD_VALUE:
            return AgentAction.tool_call(action.tool_name, _with_bad_value(tool, action.arguments))
        if m is FaultMechanism.CORRUPT_RESULT and tool is ToolKind.DB_UPDATE:
            return AgentAction.tool_call(action.tool_name, _flip_status(action.arguments))
        if m is FaultMechanism.LOOP:
            previous = conv.last_exchange
            repeated = (
                AgentAction.tool_call(previous.tool_name, previous.raw_arguments) if previous else action
            )
            self._looping[conv.agent] = repeated
            return repeated
        return action


@dataclass
class FaultBackend:
    profile: FaultProfile
    label: str = "fault"
    descriptor: BackendDescriptor = field(init=False)

    def __post_init__(self) -> None:
        self.descriptor = BackendDescriptor(kind="fault", label=self.label, seed=self.profile.rng_seed)

    def for_task(self, instance: TaskInstance) -> FaultPolicy:
        return FaultPolicy(GoldenPolicy(), plan_faults(self.profile, instance))


def fault_wrap(inner: AgentPolicy, profile: FaultProfile, instance: TaskInstance) -> FaultPolicy:
    return FaultPolicy(inner, plan_faults(profile, instance))
