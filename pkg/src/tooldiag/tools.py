"""The three reconciliation tools, their schemas, call validation and dispatch.

Tools are deterministic. Runtime faults only happen when the harness has set
a fault flag (or damaged a document) before the task starts.
"""

from __future__ import annotations

import copy
import json
import random
import zlib
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Any, Mapping

from .taxonomy import ToolKind

OCR_FIELDS = ("invoice_id", "vendor", "amount_minor", "currency", "invoice_date")


class ToolRejection(Exception):
    """Structurally valid call whose argument values the tool refuses."""


class ToolRuntimeFault(Exception):
    """Valid call that blew up inside the tool."""


class SetupError(ValueError):
    """Harness misconfiguration detected before a task starts."""


class Status(str, Enum):
    PENDING = "PENDING"
    RECONCILED = "RECONCILED"
    DISPUTED = "DISPUTED"


class FaultFlag(str, Enum):
    RAISE_ON_QUERY = "RAISE_ON_QUERY"
    RAISE_ON_UPDATE = "RAISE_ON_UPDATE"


# --------------------------------------------------------------------------
# Schemas and validation
# --------------------------------------------------------------------------


class FieldKind(str, Enum):
    STRING = "string"
    INTEGER = "integer"
    ENUM = "enum"


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: FieldKind
    required: bool = True
    enum: tuple[str, ...] | None = None
    description: str = ""


@dataclass(frozen=True)
class ToolSchema:
    name: str
    tool: ToolKind
    description: str
    fields: tuple[FieldSpec, ...]

    def __post_init__(self) -> None:
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate field in schema {self.name}")

    @property
    def required(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.fields if f.required)

    def field(self, name: str) -> FieldSpec | None:
        for f in self.fields:
            if f.name == name:
                return f
        return None

    def json_schema(self) -> dict[str, Any]:
        props: dict[str, Any] = {}
        for f in self.fields:
            if f.kind is FieldKind.ENUM:
                prop: dict[str, Any] = {"type": "string", "enum": list(f.enum or ())}
            else:
                prop = {"type": f.kind.value}
            if f.description:
                prop["description"] = f.description
            props[f.name] = prop
        return {
            "type": "object",
            "properties": props,
            "required": list(self.required),
            "additionalProperties": False,
        }

    def descriptor(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "description": self.description,
            "fields": [
                {
                    "name": f.name,
                    "kind": f.kind.value,
                    "required": f.required,
                    **({"enum": list(f.enum)} if f.enum else {}),
                }
                for f in self.fields
            ],
        }


OCR_SCHEMA = ToolSchema(
    name="ocr_tool",
    tool=ToolKind.OCR,
    description="Extract invoice fields from an attached scanned document.",
    fields=(FieldSpec("document_id", FieldKind.STRING, description="Attachment identifier"),),
)
DB_QUERY_SCHEMA = ToolSchema(
    name="db_query_tool",
    tool=ToolKind.DB_QUERY,
    description="Look up an invoice in the ledger by its exact invoice id.",
    fields=(FieldSpec("invoice_id", FieldKind.STRING),),
)
DB_UPDATE_SCHEMA = ToolSchema(
    name="db_update_tool",
    tool=ToolKind.DB_UPDATE,
    description="Set the reconciliation status of an invoice.",
    fields=(
        FieldSpec("invoice_id", FieldKind.STRING),
        FieldSpec("status", FieldKind.ENUM, enum=tuple(s.value for s in Status)),
        FieldSpec("payment_id", FieldKind.STRING, required=False),
    ),
)

SCHEMAS: dict[ToolKind, ToolSchema] = {
    ToolKind.OCR: OCR_SCHEMA,
    ToolKind.DB_QUERY: DB_QUERY_SCHEMA,
    ToolKind.DB_UPDATE: DB_UPDATE_SCHEMA,
}


def make_registry(kinds) -> dict[str, ToolSchema]:
    registry = {SCHEMAS[k].name: SCHEMAS[k] for k in kinds}
    if len(registry) != len(list(kinds)):
        raise ValueError("duplicate tool in registry")
    return registry


FULL_REGISTRY = make_registry(tuple(ToolKind))


def describe_tools(registry: Mapping[str, ToolSchema] = FULL_REGISTRY) -> list[dict[str, Any]]:
    return [schema.descriptor() for schema in registry.values()]


class FailureKind(str, Enum):
    UNKNOWN_NAME = "UNKNOWN_NAME"
    STRUCTURE = "STRUCTURE"


class StructureReason(str, Enum):
    UNPARSEABLE = "UNPARSEABLE"
    MISSING_REQUIRED = "MISSING_REQUIRED"
    UNKNOWN_FIELD = "UNKNOWN_FIELD"
    WRONG_TYPE = "WRONG_TYPE"


@dataclass(frozen=True)
class ValidatedCall:
    schema: ToolSchema
    arguments: dict[str, Any]

    @property
    def tool(self) -> ToolKind:
        return self.schema.tool


@dataclass(frozen=True)
class ValidationFailure:
    kind: FailureKind
    reason: StructureReason | None = None
    detail: str = ""


def _type_ok(spec: FieldSpec, value: Any) -> bool:
    if spec.kind is FieldKind.STRING:
        return isinstance(value, str)
    if spec.kind is FieldKind.INTEGER:
        return isinstance(value, int) and not isinstance(value, bool)
    return isinstance(value, str) and value in (spec.enum or ())


def validate_call(
    registry: Mapping[str, ToolSchema], name: str, arguments: str | None
) -> ValidatedCall | ValidationFailure:
    """Check a raw call against the registry without touching the raw text."""
    schema = registry.get(name) if isinstance(name, str) else None
    if schema is None:
        return ValidationFailure(FailureKind.UNKNOWN_NAME, detail=f"no tool named {name!r}")

    def structure(reason: StructureReason, detail: str) -> ValidationFailure:
        return ValidationFailure(FailureKind.STRUCTURE, reason, detail)

    try:
        parsed = json.loads(arguments if arguments is not None else "")
    except (TypeError, ValueError) as exc:
        return structure(StructureReason.UNPARSEABLE, f"arguments are not JSON: {exc}")
    if not isinstance(parsed, dict):
        return structure(StructureReason.UNPARSEABLE, "arguments must be a JSON object")

    unknown = sorted(k for k in parsed if schema.field(k) is None)
    if unknown:
        return structure(StructureReason.UNKNOWN_FIELD, f"unknown field(s): {', '.join(unknown)}")

    # null on an optional field means "not supplied"
    args = {k: v for k, v in parsed.items() if not (v is None and not schema.field(k).required)}
    missing = [f for f in schema.required if f not in args]
    if missing:
        return structure(
            StructureReason.MISSING_REQUIRED, f"missing required field(s): {', '.join(missing)}"
        )
    for key, value in args.items():
        spec = schema.field(key)
        if not _type_ok(spec, value):
            return structure(
                StructureReason.WRONG_TYPE, f"field {key!r} expects {spec.kind.value}, got {value!r}"
            )
    return ValidatedCall(schema, args)


# --------------------------------------------------------------------------
# Invoice store
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class InvoiceRecord:
    invoice_id: str
    vendor: str
    amount_minor: int
    currency: str
    invoice_date: str
    status: Status = Status.PENDING
    payment_id: str | None = None

    def __post_init__(self) -> None:
        if self.amount_minor < 0:
            raise ValueError("amount_minor must be nonnegative")
        object.__setattr__(self, "status", Status(self.status))

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["status"] = self.status.value
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> InvoiceRecord:
        return cls(**d)


@dataclass
class InvoiceStore:
    records: dict[str, InvoiceRecord] = field(default_factory=dict)
    fault_flags: dict[str, set[FaultFlag]] = field(default_factory=dict)

    @classmethod
    def from_records(cls, records) -> InvoiceStore:
        store = cls()
        for rec in records:
            if rec.invoice_id in store.records:
                raise ValueError(f"duplicate invoice_id {rec.invoice_id}")
            store.records[rec.invoice_id] = rec
        return store

    def copy(self) -> InvoiceStore:
        return InvoiceStore(dict(self.records), copy.deepcopy(self.fault_flags))

    def snapshot(self) -> list[dict[str, Any]]:
        return [self.records[k].to_dict() for k in sorted(self.records)]

    def has_flag(self, invoice_id: str, flag: FaultFlag) -> bool:
        return flag in self.fault_flags.get(invoice_id, ())


@dataclass(frozen=True)
class ToolOutput:
    """Successful tool result. ``payload`` is plain JSON data."""

    tool: ToolKind
    payload: Any

    def to_dict(self) -> dict[str, Any]:
        return {"tool": self.tool.value, "payload": self.payload}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ToolOutput:
        return cls(ToolKind(d["tool"]), d["payload"])


def db_query(store: InvoiceStore, invoice_id: str) -> ToolOutput:
    record = store.records.get(invoice_id)
    if record is None:
        raise ToolRejection(f"invoice {invoice_id!r} not found")
    if store.has_flag(invoice_id, FaultFlag.RAISE_ON_QUERY):
        raise ToolRuntimeFault("ledger connection reset during query")
    return ToolOutput(ToolKind.DB_QUERY, [record.to_dict()])


def db_update(
    store: InvoiceStore, invoice_id: str, status: Status | str, payment_id: str | None = None
) -> ToolOutput:
    record = store.records.get(invoice_id)
    if record is None:
        raise ToolRejection(f"invoice {invoice_id!r} not found")
    if store.has_flag(invoice_id, FaultFlag.RAISE_ON_UPDATE):
        raise ToolRuntimeFault("ledger write failed: lock timeout")
    new_status = Status(status)
    store.records[invoice_id] = replace(record, status=new_status, payment_id=payment_id)
    return ToolOutput(
        ToolKind.DB_UPDATE,
        {"invoice_id": invoice_id, "new_status": new_status.value, "payment_id": payment_id},
    )


def inject_tool_fault(store: InvoiceStore, invoice_id: str, mode: FaultFlag | str) -> None:
    if invoice_id not in store.records:
        raise SetupError(f"cannot flag unknown invoice {invoice_id!r}")
    store.fault_flags.setdefault(invoice_id, set()).add(FaultFlag(mode))


# --------------------------------------------------------------------------
# Documents and OCR
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DocumentBlob:
    document_id: str
    encoded_payload: str
    corrupted: bool = False

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> DocumentBlob:
        return cls(**d)


def _rot47(text: str) -> str:
    out = []
    for ch in text:
        o = ord(ch)
        out.append(chr(33 + (o - 33 + 47) % 94) if 33 <= o <= 126 else ch)
    return "".join(out)


def _field_lines(fields: Mapping[str, Any]) -> str:
    return "\n".join(f"{k}={fields[k]}" for k in OCR_FIELDS)


def encode_document(document_id: str, fields: Mapping[str, Any], corrupted: bool = False) -> DocumentBlob:
    body = _field_lines(fields)
    plain = f"{body}\nchecksum={zlib.crc32(body.encode('utf-8')):08x}"
    return DocumentBlob(document_id, _rot47(plain), corrupted)


def alter_one_digit(amount: int, rng: random.Random) -> int:
    digits = str(amount)
    pos = rng.randrange(len(digits))
    banned = {digits[pos]} | ({"0"} if pos == 0 and len(digits) > 1 else set())
    choice = rng.choice([d for d in "0123456789" if d not in banned])
    return int(digits[:pos] + choice + digits[pos + 1 :])


def corrupt_document(blob: DocumentBlob, rng: random.Random, amount_minor: int | None = None) -> DocumentBlob:
    """Re-encode with a wrong amount (one digit changed unless ``amount_minor``
    is given); the checksum stays valid."""
    fields = dict(ocr_extract(blob).payload)
    if amount_minor is None or amount_minor == fields["amount_minor"]:
        amount_minor = alter_one_digit(fields["amount_minor"], rng)
    fields["amount_minor"] = amount_minor
    return encode_document(blob.document_id, fields, corrupted=True)


def truncate_document(blob: DocumentBlob) -> DocumentBlob:
    return replace(blob, encoded_payload=blob.encoded_payload[: len(blob.encoded_payload) // 2])


def ocr_extract(blob: DocumentBlob) -> ToolOutput:
    lines = _rot47(blob.encoded_payload).split("\n")
    if len(lines) != len(OCR_FIELDS) + 1 or not lines[-1].startswith("checksum="):
        raise ToolRuntimeFault("document is truncated or unreadable")
    body = "\n".join(lines[:-1])
    if f"{zlib.crc32(body.encode('utf-8')):08x}" != lines[-1][len("checksum="):]:
        raise ToolRuntimeFault("document checksum mismatch")
    fields: dict[str, Any] = {}
    for line, key in zip(lines[:-1], OCR_FIELDS):
        k, sep, v = line.partition("=")
        if k != key or not sep:
            raise ToolRuntimeFault(f"unreadable field line {line!r}")
        fields[k] = v
    try:
        fields["amount_minor"] = int(fields["amount_minor"])
    except ValueError:
        raise ToolRuntimeFault("amount is not numeric") from None
    return ToolOutput(ToolKind.OCR, fields)


# --------------------------------------------------------------------------
# Per-task environment
# --------------------------------------------------------------------------


@dataclass
class ToolEnvironment:
    """Everything the tools can see during one task. Owned by that task only."""

    store: InvoiceStore
    documents: dict[str, DocumentBlob] = field(default_factory=dict)
    tampered_queries: dict[str, int] = field(default_factory=dict)

    def dispatch(self, call: ValidatedCall) -> ToolOutput:
        args = call.arguments
        if call.tool is ToolKind.OCR:
            blob = self.documents.get(args["document_id"])
            if blob is None:
                raise ToolRejection(f"no attachment {args['document_id']!r}")
            return ocr_extract(blob)
        if call.tool is ToolKind.DB_QUERY:
            out = db_query(self.store, args["invoice_id"])
            if args["invoice_id"] in self.tampered_queries:
                rows = [dict(r) for r in out.payload]
                rows[0]["amount_minor"] = self.tampered_queries[args["invoice_id"]]
                out = ToolOutput(ToolKind.DB_QUERY, rows)
            return out
        return db_update(self.store, args["invoice_id"], args["status"], args.get("payment_id"))
