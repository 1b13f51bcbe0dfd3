"""Success rate, timing, step counts, OCR F1 and per-category error matrices."""

from __future__ import annotations

import datetime as dt
import statistics
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .taxonomy import CATEGORY_CODES, INFRASTRUCTURE, OTHER
from .trace import TaskResult


def _canonical_value(key: str, value: Any) -> Any:
    if isinstance(value, str):
        value = value.strip()
    if key == "amount_minor":
        if isinstance(value, bool):
            return value
        if isinstance(value, int):
            return value
        if isinstance(value, str) and value.lstrip("-").isdigit():
            return int(value)
        return value
    if key == "invoice_date" and isinstance(value, str):
        try:
            return dt.date.fromisoformat(value).isoformat()
        except ValueError:
            return value
    return value


def ocr_f1(extracted: Mapping[str, Any], expected: Mapping[str, Any]) -> float:
    """Field-level F1: a field is correct when present and equal after canonicalization."""
    if not extracted or not expected:
        return 0.0
    correct = sum(
        1
        for key, value in extracted.items()
        if key in expected and _canonical_value(key, value) == _canonical_value(key, expected[key])
    )
    precision = correct / len(extracted)
    recall = correct / len(expected)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    mean = statistics.fmean(values)
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, std


@dataclass
class ErrorMatrix:
    denominator: int
    counts: dict[str, int] = field(default_factory=lambda: {c: 0 for c in CATEGORY_CODES})
    other: int = 0
    infrastructure: int = 0

    def __post_init__(self) -> None:
        if self.denominator <= 0:
            raise ValueError("matrix denominator must be positive")
        unknown = set(self.counts) - set(CATEGORY_CODES)
        if unknown:
            raise ValueError(f"unknown categories in matrix: {sorted(unknown)}")
        for code in CATEGORY_CODES:
            self.counts.setdefault(code, 0)

    def add(self, label: str) -> None:
        if label == OTHER:
            self.other += 1
        elif label == INFRASTRUCTURE:
            self.infrastructure += 1
        elif label in self.counts:
            self.counts[label] += 1
        else:
            raise ValueError(f"cannot count label {label!r}")

    @property
    def failures(self) -> int:
        return sum(self.counts.values()) + self.other + self.infrastructure

    def rate(self, code: str) -> float:
        return self.counts[code] / self.denominator

    @classmethod
    def from_results(cls, results: Iterable[TaskResult]) -> ErrorMatrix | None:
        results = list(results)
        if not results:
            return None
        matrix = cls(len(results))
        for r in results:
            if not r.succeeded:
                matrix.add(r.primary_error)
        return matrix

    def to_dict(self) -> dict[str, Any]:
        return {
            "denominator": self.denominator,
            "counts": {c: self.counts[c] for c in CATEGORY_CODES},
            "other": self.other,
            "infrastructure": self.infrastructure,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ErrorMatrix:
        return cls(d["denominator"], dict(d["counts"]), d.get("other", 0), d.get("infrastructure", 0))


@dataclass
class SummaryStats:
    total: int
    successes: int
    sr_percent: float
    time_mean_s: float
    time_std_s: float
    steps_mean: float
    steps_std: float
    ocr_f1_mean: float | None


def compute_summary(results: Sequence[TaskResult]) -> SummaryStats:
    if not results:
        raise ValueError("cannot summarise an empty result list")
    successes = sum(r.succeeded for r in results)
    t_mean, t_std = _mean_std([r.elapsed_ms / 1000 for r in results])
    s_mean, s_std = _mean_std([float(r.steps) for r in results])
    f1s = [r.ocr_f1 for r in results if r.modality == "VISION" and r.ocr_f1 is not None]
    return SummaryStats(
        total=len(results),
        successes=successes,
        sr_percent=100.0 * successes / len(results),
        time_mean_s=t_mean,
        time_std_s=t_std,
        steps_mean=s_mean,
        steps_std=s_std,
        ocr_f1_mean=statistics.fmean(f1s) if f1s else None,
    )


TIMING_KEYS = ("time_mean_s", "time_std_s")


@dataclass
class RunSummary:
    run_id: str
    backend: dict[str, Any]
    dataset_seed: int
    limit: int
    stats: SummaryStats
    matrix_vision: ErrorMatrix | None
    matrix_text: ErrorMatrix | None

    @property
    def sr_percent(self) -> float:
        return self.stats.sr_percent

    @property
    def platform_label(self) -> str:
        return str(self.backend.get("platform", self.backend.get("kind", "")))

    @property
    def model_label(self) -> str:
        return str(self.backend.get("label", ""))

    def matrices(self) -> dict[str, ErrorMatrix]:
        out = {}
        if self.matrix_vision is not None:
            out["vision"] = self.matrix_vision
        if self.matrix_text is not None:
            out["text"] = self.matrix_text
        return out

    def to_dict(self, canonical: bool = False) -> dict[str, Any]:
        s = self.stats
        d: dict[str, Any] = {
            "run_id": self.run_id,
            "label": {"backend": self.backend, "dataset_seed": self.dataset_seed},
            "limit": self.limit,
            "total": s.total,
            "successes": s.successes,
            "sr_percent": s.sr_percent,
            "time_mean_s": s.time_mean_s,
            "time_std_s": s.time_std_s,
            "steps_mean": s.steps_mean,
            "steps_std": s.steps_std,
            "ocr_f1_mean": s.ocr_f1_mean,
            "matrix_vision": self.matrix_vision.to_dict() if self.matrix_vision else None,
            "matrix_text": self.matrix_text.to_dict() if self.matrix_text else None,
        }
        if canonical:
            d.pop("run_id")
            for key in TIMING_KEYS:
                d.pop(key)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> RunSummary:
        stats = SummaryStats(
            total=d["total"],
            successes=d["successes"],
            sr_percent=d["sr_percent"],
            time_mean_s=d["time_mean_s"],
            time_std_s=d["time_std_s"],
            steps_mean=d["steps_mean"],
            steps_std=d["steps_std"],
            ocr_f1_mean=d.get("ocr_f1_mean"),
        )
        mv, mt = d.get("matrix_vision"), d.get("matrix_text")
        return cls(
            run_id=d["run_id"],
            backend=dict(d["label"]["backend"]),
            dataset_seed=d["label"]["dataset_seed"],
            limit=d["limit"],
            stats=stats,
            matrix_vision=ErrorMatrix.from_dict(mv) if mv else None,
            matrix_text=ErrorMatrix.from_dict(mt) if mt else None,
        )
