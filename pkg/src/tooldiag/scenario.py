"""Synthetic invoice-reconciliation dataset.

Each task carries a private ledger snapshot (target invoice plus 4-9
distractors), the incoming invoice either as plain email text or as an
encoded document that only the OCR tool can read, and the ground truth the
harness scores against. Generation is a pure function of ``(seed, count)``.
"""

from __future__ import annotations

import datetime as dt
import json
import random
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator

from .taxonomy import ToolKind
from .tools import (
    DocumentBlob,
    InvoiceRecord,
    InvoiceStore,
    Status,
    ToolOutput,
    encode_document,
)

FORMAT_VERSION = 1
GENERATOR_VERSION = "1.0"
MISMATCH_SHARE_DENOMINATOR = 5  # one in five tasks per modality is a MISMATCH
MIN_DISTRACTORS, MAX_DISTRACTORS = 4, 9

VENDORS = (
    "Acme Industrial Supply",
    "Blue Harbor Logistics",
    "Cedar & Pine Furnishings",
    "Delta Office Systems",
    "Evergreen Catering Co",
    "Falcon Freight Services",
    "Granite Peak Consulting",
    "Helios Solar Components",
    "Ironwood Facilities",
    "Juniper Software Ltd",
    "Keystone Print Works",
    "Lumen Electrical Wholesale",
    "Meridian Travel Partners",
    "Northwind Traders",
    "Orchid Cleaning Services",
    "Pioneer Packaging",
)
CURRENCIES = ("USD", "EUR", "GBP", "SGD", "INR")

EMAIL_TEMPLATES = (
    "Subject: Payment advice for invoice {invoice_id}\n\n"
    "Hello Accounts Payable,\n\n"
    "Please find below the details of invoice {invoice_id} issued by {vendor} on {invoice_date}.\n"
    "Amount due: {amount} {currency}\n\n"
    "Kind regards,\n{vendor} billing",
    "Subject: Invoice {invoice_id} from {vendor}\n\n"
    "Hi team,\n\n"
    "{vendor} has issued invoice {invoice_id} dated {invoice_date} for a total of "
    "{currency} {amount}. Please reconcile it against the ledger.\n\nThanks",
    "Invoice reference: {invoice_id}\n"
    "Supplier: {vendor}\n"
    "Invoice date: {invoice_date}\n"
    "Total: {amount} {currency}\n",
)


class Modality(str, Enum):
    VISION = "VISION"
    TEXT = "TEXT"


class Variant(str, Enum):
    MATCH = "MATCH"
    MISMATCH = "MISMATCH"

    @property
    def expected_status(self) -> Status:
        return Status.RECONCILED if self is Variant.MATCH else Status.DISPUTED


@dataclass(frozen=True)
class PlanStage:
    tool: ToolKind
    expected_output: ToolOutput

    def to_dict(self) -> dict[str, Any]:
        return {"tool": self.tool.value, "expected_output": self.expected_output.to_dict()}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> PlanStage:
        return cls(ToolKind(d["tool"]), ToolOutput.from_dict(d["expected_output"]))


@dataclass(frozen=True)
class GoldenPlan:
    stages: tuple[PlanStage, ...]

    @property
    def tools(self) -> tuple[ToolKind, ...]:
        return tuple(s.tool for s in self.stages)

    def to_dict(self) -> dict[str, Any]:
        return {"stages": [s.to_dict() for s in self.stages]}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> GoldenPlan:
        return cls(tuple(PlanStage.from_dict(s) for s in d["stages"]))


@dataclass(frozen=True)
class TaskInstance:
    task_id: str
    modality: Modality
    store_snapshot: tuple[InvoiceRecord, ...]
    seed: int
    email_text: str | None = None
    document: DocumentBlob | None = None

    def __post_init__(self) -> None:
        if (self.modality is Modality.TEXT) != (self.email_text is not None):
            raise ValueError("email_text must be present exactly for TEXT tasks")
        if (self.modality is Modality.VISION) != (self.document is not None):
            raise ValueError("document must be present exactly for VISION tasks")

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "modality": self.modality.value,
            "email_text": self.email_text,
            "document": self.document.to_dict() if self.document else None,
            "store_snapshot": [r.to_dict() for r in self.store_snapshot],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> TaskInstance:
        return cls(
            task_id=d["task_id"],
            modality=Modality(d["modality"]),
            email_text=d.get("email_text"),
            document=DocumentBlob.from_dict(d["document"]) if d.get("document") else None,
            store_snapshot=tuple(InvoiceRecord.from_dict(r) for r in d["store_snapshot"]),
            seed=d["seed"],
        )


@dataclass(frozen=True)
class GroundTruth:
    target_invoice_id: str
    variant: Variant
    expected_status: Status
    expected_amount_minor: int
    expected_fields: dict[str, Any]
    expected_plan: GoldenPlan

    def __post_init__(self) -> None:
        if self.expected_status is not self.variant.expected_status:
            raise ValueError("expected_status must follow from the variant")

    def to_dict(self) -> dict[str, Any]:
        return {
            "target_invoice_id": self.target_invoice_id,
            "variant": self.variant.value,
            "expected_status": self.expected_status.value,
            "expected_amount_minor": self.expected_amount_minor,
            "expected_fields": dict(self.expected_fields),
            "expected_plan": self.expected_plan.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> GroundTruth:
        return cls(
            target_invoice_id=d["target_invoice_id"],
            variant=Variant(d["variant"]),
            expected_status=Status(d["expected_status"]),
            expected_amount_minor=d["expected_amount_minor"],
            expected_fields=dict(d["expected_fields"]),
            expected_plan=GoldenPlan.from_dict(d["expected_plan"]),
        )


@dataclass(frozen=True)
class Task:
    instance: TaskInstance
    truth: GroundTruth

    @property
    def task_id(self) -> str:
        return self.instance.task_id

    @property
    def modality(self) -> Modality:
        return self.instance.modality


@dataclass(frozen=True)
class Dataset:
    seed: int
    count: int
    tasks: tuple[Task, ...]

    def __len__(self) -> int:
        return len(self.tasks)

    def __iter__(self) -> Iterator[Task]:
        return iter(self.tasks)

    def header(self) -> dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "seed": self.seed,
            "count": self.count,
            "generator_version": GENERATOR_VERSION,
        }

    def by_id(self) -> dict[str, Task]:
        return {t.task_id: t for t in self.tasks}

    def subset(self, modality: Modality | None = None, limit: int | None = None) -> Dataset:
        tasks = [t for t in self.tasks if modality is None or t.modality is modality]
        if limit is not None:
            tasks = tasks[:limit]
        return Dataset(self.seed, self.count, tuple(tasks))

    def to_jsonl(self) -> str:
        lines = [_dumps(self.header())]
        lines += [_dumps({"instance": t.instance.to_dict(), "truth": t.truth.to_dict()}) for t in self]
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def from_jsonl(cls, text: str) -> Dataset:
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        if not rows or "format_version" not in rows[0]:
            raise ValueError("dataset file has no header line")
        header = rows[0]
        if header["format_version"] != FORMAT_VERSION:
            raise ValueError(f"unsupported dataset format {header['format_version']}")
        tasks = tuple(
            Task(TaskInstance.from_dict(r["instance"]), GroundTruth.from_dict(r["truth"]))
            for r in rows[1:]
        )
        return cls(header["seed"], header["count"], tasks)

    @classmethod
    def read(cls, path: str | Path) -> Dataset:
        return cls.from_jsonl(Path(path).read_text(encoding="utf-8"))


def _dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def format_amount(amount_minor: int) -> str:
    return f"{amount_minor // 100:,}.{amount_minor % 100:02d}"


def _make_record(rng: random.Random, invoice_id: str, status: Status) -> InvoiceRecord:
    day = dt.date(2024, 1, 1) + dt.timedelta(days=rng.randint(0, 365))
    return InvoiceRecord(
        invoice_id=invoice_id,
        vendor=rng.choice(VENDORS),
        amount_minor=rng.randint(1_000, 2_500_000),
        currency=rng.choice(CURRENCIES),
        invoice_date=day.isoformat(),
        status=status,
        payment_id=f"PAY-{rng.randint(100000, 999999)}" if status is Status.RECONCILED else None,
    )


def _make_task(index: int, width: int, modality: Modality, variant: Variant, seed: int) -> Task:
    rng = random.Random(seed)
    task_id = f"T{index:0{width}d}"
    n_distractors = rng.randint(MIN_DISTRACTORS, MAX_DISTRACTORS)
    numbers = rng.sample(range(1, 10_000), n_distractors + 1)
    ids = [f"INV-2024-{n:04d}" for n in numbers]
    target = _make_record(rng, ids[0], Status.PENDING)
    distractors = [
        _make_record(rng, i, rng.choices(list(Status), weights=(6, 3, 1))[0]) for i in ids[1:]
    ]
    snapshot = [target, *distractors]
    rng.shuffle(snapshot)

    stated = target.amount_minor
    if variant is Variant.MISMATCH:
        delta = rng.randint(100, 50_000)
        if rng.random() < 0.5 or stated - delta <= 0:
            stated += delta
        else:
            stated -= delta
    fields = {
        "invoice_id": target.invoice_id,
        "vendor": target.vendor,
        "amount_minor": stated,
        "currency": target.currency,
        "invoice_date": target.invoice_date,
    }

    if modality is Modality.VISION:
        instance = TaskInstance(
            task_id, modality, tuple(snapshot), seed,
            document=encode_document(f"DOC-{task_id}", fields),
        )
    else:
        template = rng.choice(EMAIL_TEMPLATES)
        text = template.format(**{**fields, "amount": format_amount(stated)})
        instance = TaskInstance(task_id, modality, tuple(snapshot), seed, email_text=text)

    provisional = GroundTruth(
        target_invoice_id=target.invoice_id,
        variant=variant,
        expected_status=variant.expected_status,
        expected_amount_minor=stated,
        expected_fields=fields,
        expected_plan=GoldenPlan(()),
    )
    truth = replace(provisional, expected_plan=golden_plan(instance, provisional))
    return Task(instance, truth)


def generate_dataset(seed: int, count: int) -> Dataset:
    if count <= 0 or count % 2:
        raise ValueError(f"count must be a positive even number, got {count}")
    rng = random.Random(seed)
    per_modality = count // 2
    quotas: dict[Modality, list[Variant]] = {}
    for modality in Modality:
        n_mismatch = per_modality // MISMATCH_SHARE_DENOMINATOR
        variants = [Variant.MISMATCH] * n_mismatch + [Variant.MATCH] * (per_modality - n_mismatch)
        rng.shuffle(variants)
        quotas[modality] = variants

    width = max(5, len(str(count - 1)))
    tasks = []
    for index in range(count):
        modality = Modality.VISION if index % 2 == 0 else Modality.TEXT
        variant = quotas[modality][index // 2]
        tasks.append(_make_task(index, width, modality, variant, rng.getrandbits(64)))
    return Dataset(seed, count, tuple(tasks))


def golden_plan(instance: TaskInstance, truth: GroundTruth) -> GoldenPlan:
    target = next(r for r in instance.store_snapshot if r.invoice_id == truth.target_invoice_id)
    stages = []
    if instance.modality is Modality.VISION:
        stages.append(PlanStage(ToolKind.OCR, ToolOutput(ToolKind.OCR, dict(truth.expected_fields))))
    stages.append(PlanStage(ToolKind.DB_QUERY, ToolOutput(ToolKind.DB_QUERY, [target.to_dict()])))
    stages.append(
        PlanStage(
            ToolKind.DB_UPDATE,
            ToolOutput(
                ToolKind.DB_UPDATE,
                {
                    "invoice_id": target.invoice_id,
                    "new_status": truth.expected_status.value,
                    "payment_id": None,
                },
            ),
        )
    )
    return GoldenPlan(tuple(stages))


def oracle_final_state(instance: TaskInstance, truth: GroundTruth) -> InvoiceStore:
    store = InvoiceStore.from_records(instance.store_snapshot)
    target = store.records[truth.target_invoice_id]
    store.records[target.invoice_id] = replace(target, status=truth.expected_status)
    return store


def iter_modality(tasks: Iterable[Task], modality: Modality) -> Iterator[Task]:
    return (t for t in tasks if t.modality is modality)
