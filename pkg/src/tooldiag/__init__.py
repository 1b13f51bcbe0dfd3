"""Deterministic harness for diagnosing tool-call failures in a multi-agent invoice workflow."""

from .taxonomy import ALL_CATEGORIES, CATEGORY_CODES, INFRASTRUCTURE, OTHER, ErrorCategory, ErrorType, ToolKind

__version__ = "0.1.0"

__all__ = [
    "ALL_CATEGORIES",
    "CATEGORY_CODES",
    "INFRASTRUCTURE",
    "OTHER",
    "ErrorCategory",
    "ErrorType",
    "ToolKind",
    "__version__",
]
