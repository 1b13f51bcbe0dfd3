"""Error taxonomy: four error types crossed with three tool kinds.

Every failed task is labelled with exactly one of the twelve categories, or
with one of the two residual labels that live outside the matrix
(``OTHER`` for reasoning failures, ``INFRASTRUCTURE`` for transport faults).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

OTHER = "OTHER"
INFRASTRUCTURE = "INFRASTRUCTURE"


class UnknownCategoryError(ValueError):
    """Raised when a category code string names no taxonomy cell."""


class ContractViolation(RuntimeError):
    """A caller broke a documented precondition."""


class ToolKind(str, Enum):
    OCR = "OCR"
    DB_QUERY = "DB_QUERY"
    DB_UPDATE = "DB_UPDATE"

    @property
    def tool_name(self) -> str:
        return _TOOL_NAMES[self]

    @classmethod
    def from_tool_name(cls, name: str | None) -> ToolKind | None:
        for kind, registered in _TOOL_NAMES.items():
            if registered == name:
                return kind
        return None


_TOOL_NAMES = {
    ToolKind.OCR: "ocr_tool",
    ToolKind.DB_QUERY: "db_query_tool",
    ToolKind.DB_UPDATE: "db_update_tool",
}


class ErrorType(str, Enum):
    NOT_INITIALIZED = "NOT_INITIALIZED"
    ARGS_MISMATCH = "ARGS_MISMATCH"
    ERROR = "ERROR"
    RESULT_MISMATCH = "RESULT_MISMATCH"


class Mechanism(str, Enum):
    """How a deviation manifested in the trace."""

    OMISSION = "OMISSION"
    BAD_NAME = "BAD_NAME"
    BAD_STRUCTURE = "BAD_STRUCTURE"
    BAD_VALUE = "BAD_VALUE"
    RUNTIME = "RUNTIME"
    OUTPUT_DIVERGENCE = "OUTPUT_DIVERGENCE"
    LOOP_TERMINATION = "LOOP_TERMINATION"

    @property
    def error_type(self) -> ErrorType:
        return _MECHANISM_TYPES[self]


_MECHANISM_TYPES = {
    Mechanism.OMISSION: ErrorType.NOT_INITIALIZED,
    Mechanism.BAD_NAME: ErrorType.NOT_INITIALIZED,
    Mechanism.BAD_STRUCTURE: ErrorType.NOT_INITIALIZED,
    Mechanism.LOOP_TERMINATION: ErrorType.NOT_INITIALIZED,
    Mechanism.BAD_VALUE: ErrorType.ARGS_MISMATCH,
    Mechanism.RUNTIME: ErrorType.ERROR,
    Mechanism.OUTPUT_DIVERGENCE: ErrorType.RESULT_MISMATCH,
}


@dataclass(frozen=True, order=False)
class ErrorCategory:
    tool: ToolKind
    error_type: ErrorType

    @property
    def code(self) -> str:
        return f"{self.tool.value}_TOOL_{self.error_type.value}"

    @classmethod
    def parse(cls, code: str) -> ErrorCategory:
        try:
            return _BY_CODE[code]
        except (KeyError, TypeError):
            raise UnknownCategoryError(f"unknown category: {code!r}") from None

    def __str__(self) -> str:
        return self.code


def category_of(tool: ToolKind, error_type: ErrorType) -> ErrorCategory:
    return ErrorCategory(ToolKind(tool), ErrorType(error_type))


# Tool-major order, matching the column order used in reports.
ALL_CATEGORIES: tuple[ErrorCategory, ...] = tuple(
    ErrorCategory(tool, etype) for tool in ToolKind for etype in ErrorType
)
_BY_CODE = {c.code: c for c in ALL_CATEGORIES}
CATEGORY_CODES: tuple[str, ...] = tuple(c.code for c in ALL_CATEGORIES)


@dataclass(frozen=True)
class Deviation:
    category: ErrorCategory
    mechanism: Mechanism
    step_index: int

    def __post_init__(self) -> None:
        if self.step_index < 0:
            raise ValueError("step_index must be nonnegative")
        if self.mechanism.error_type is not self.category.error_type:
            raise ValueError(
                f"mechanism {self.mechanism.value} cannot produce {self.category.code}"
            )


def is_matrix_label(label: str | None) -> bool:
    return label in _BY_CODE
