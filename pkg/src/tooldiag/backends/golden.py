"""Scripted reference policy that always follows the plan exactly.

Script per task (steps in parentheses):

* EMAIL: ``ocr_tool`` then HANDOFF for VISION tasks (2); HANDOFF with the
  fields parsed from the email for TEXT tasks (1).
* DATA_ENG: ``db_query_tool``, ``db_update_tool``, HANDOFF (3).
* RECON: FINAL_DECISION (1).

When a tool call comes back with an error the policy gives up on the
current agent with a TEXT message; it never retries.
"""

from __future__ import annotations

import json
import re
from typing import Any

from ..scenario import Modality, TaskInstance
from ..taxonomy import ToolKind
from ..trace import AgentRole, DispatchOutcome
from ..workflow import AgentAction, ConversationState
from .base import BackendDescriptor

GOLDEN_STEPS = {Modality.TEXT: 5, Modality.VISION: 6}

_INVOICE_ID = re.compile(r"\bINV-\d{4}-\d{4}\b")
_DATE = re.compile(r"\b\d{4}-\d{2}-\d{2}\b")
_AMOUNT = re.compile(r"(?:\b([A-Z]{3}) )?(\d{1,3}(?:,\d{3})*\.\d{2})(?: ([A-Z]{3})\b)?")
_VENDOR = (
    re.compile(r"issued by (.+?) on \d{4}-"),
    re.compile(r"^(.+?) has issued invoice", re.MULTILINE),
    re.compile(r"^Supplier: (.+)$", re.MULTILINE),
)


def _dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True)


def parse_email(text: str) -> dict[str, Any] | None:
    """Pull the five invoice fields out of one of the dataset's email layouts."""
    invoice = _INVOICE_ID.search(text)
    date = _DATE.search(text)
    amount = _AMOUNT.search(text)
    vendor = next((m for m in (p.search(text) for p in _VENDOR) if m), None)
    if not (invoice and date and amount and vendor):
        return None
    currency = amount.group(1) or amount.group(3)
    if currency is None:
        return None
    major, minor = amount.group(2).replace(",", "").split(".")
    return {
        "invoice_id": invoice.group(0),
        "vendor": vendor.group(1).strip(),
        "amount_minor": int(major) * 100 + int(minor),
        "currency": currency,
        "invoice_date": date.group(0),
    }


def _load_note(note: str | None) -> dict[str, Any] | None:
    if not note:
        return None
    try:
        data = json.loads(note)
    except ValueError:
        return None
    return data if isinstance(data, dict) else None


def _failure_text(conv: ConversationState) -> AgentAction:
    last = conv.last_exchange
    return AgentAction.text(f"The {last.tool_name} call failed ({last.error}); stopping here.")


class GoldenPolicy:
    def next_action(self, conv: ConversationState) -> AgentAction:
        if conv.agent is AgentRole.EMAIL:
            return self._email(conv)
        if conv.agent is AgentRole.DATA_ENG:
            return self._data_eng(conv)
        return self._recon(conv)

    def _email(self, conv: ConversationState) -> AgentAction:
        if conv.modality is Modality.TEXT:
            fields = parse_email(conv.email_text or "")
            if fields is None:
                return AgentAction.text("I could not find invoice details in this email.")
            return AgentAction.handoff(_dumps(fields))
        last = conv.last_exchange
        if last is None:
            return AgentAction.tool_call("ocr_tool", _dumps({"document_id": conv.document_id}))
        if last.outcome is not DispatchOutcome.OK:
            return _failure_text(conv)
        return AgentAction.handoff(_dumps(last.output.payload))

    def _data_eng(self, conv: ConversationState) -> AgentAction:
        invoice = _load_note(conv.handoff_note)
        if not invoice or "invoice_id" not in invoice or "amount_minor" not in invoice:
            return AgentAction.text("No invoice details were handed over, so there is nothing to look up.")
        invoice_id = invoice["invoice_id"]
        last = conv.last_exchange
        if last is None:
            return AgentAction.tool_call("db_query_tool", _dumps({"invoice_id": invoice_id}))
        if last.outcome is not DispatchOutcome.OK:
            return _failure_text(conv)

        queried = [
            ex.output.payload for ex in conv.exchanges
            if ex.outcome is DispatchOutcome.OK and ex.output.tool is ToolKind.DB_QUERY
        ]
        rows = [r for r in queried[-1] if r.get("invoice_id") == invoice_id] if queried else []
        if not rows:
            return AgentAction.text(f"Invoice {invoice_id} is not in the ledger.")
        ledger_amount = rows[0]["amount_minor"]

        if last.output.tool is ToolKind.DB_QUERY:
            status = "RECONCILED" if ledger_amount == invoice["amount_minor"] else "DISPUTED"
            return AgentAction.tool_call(
                "db_update_tool", _dumps({"invoice_id": invoice_id, "status": status})
            )
        return AgentAction.handoff(_dumps({
            "invoice_id": invoice_id,
            "invoice_amount_minor": invoice["amount_minor"],
            "ledger_amount_minor": ledger_amount,
            "status": last.output.payload["new_status"],
        }))

    def _recon(self, conv: ConversationState) -> AgentAction:
        findings = _load_note(conv.handoff_note)
        if not findings or not {"invoice_amount_minor", "ledger_amount_minor"} <= findings.keys():
            return AgentAction.text("There is not enough information to reconcile this invoice.")
        same = findings["invoice_amount_minor"] == findings["ledger_amount_minor"]
        return AgentAction.decision("RECONCILED" if same else "DISPUTED")


class GoldenBackend:
    def __init__(self, label: str = "golden"):
        self.descriptor = BackendDescriptor(kind="golden", label=label)

    def for_task(self, instance: TaskInstance) -> GoldenPolicy:
        return GoldenPolicy()
