import pytest

from tooldiag.taxonomy import (
    ALL_CATEGORIES,
    CATEGORY_CODES,
    INFRASTRUCTURE,
    OTHER,
    Deviation,
    ErrorCategory,
    ErrorType,
    Mechanism,
    ToolKind,
    UnknownCategoryError,
    category_of,
    is_matrix_label,
)


def test_twelve_distinct_cells():
    assert len(ALL_CATEGORIES) == 12
    assert len(set(CATEGORY_CODES)) == 12
    assert {(c.tool, c.error_type) for c in ALL_CATEGORIES} == {
        (t, e) for t in ToolKind for e in ErrorType
    }


def test_tool_major_order():
    assert CATEGORY_CODES[:4] == (
        "OCR_TOOL_NOT_INITIALIZED", "OCR_TOOL_ARGS_MISMATCH", "OCR_TOOL_ERROR", "OCR_TOOL_RESULT_MISMATCH",
    )
    assert CATEGORY_CODES[-1] == "DB_UPDATE_TOOL_RESULT_MISMATCH"


@pytest.mark.parametrize("code", CATEGORY_CODES)
def test_parse_format_roundtrip(code):
    assert ErrorCategory.parse(code).code == code
    assert str(ErrorCategory.parse(code)) == code


@pytest.mark.parametrize("bad", ["", "OCR_TOOL", "ocr_tool_error", "DB_TOOL_ERROR", OTHER, INFRASTRUCTURE, None])
def test_parse_rejects_unknown(bad):
    with pytest.raises(UnknownCategoryError):
        ErrorCategory.parse(bad)


def test_residual_labels_outside_matrix():
    assert not is_matrix_label(OTHER)
    assert not is_matrix_label(INFRASTRUCTURE)
    assert all(is_matrix_label(c) for c in CATEGORY_CODES)


def test_category_of_accepts_raw_values():
    assert category_of("DB_QUERY", "ERROR") == ErrorCategory(ToolKind.DB_QUERY, ErrorType.ERROR)


@pytest.mark.parametrize("mechanism, etype", [
    (Mechanism.OMISSION, ErrorType.NOT_INITIALIZED),
    (Mechanism.BAD_NAME, ErrorType.NOT_INITIALIZED),
    (Mechanism.BAD_STRUCTURE, ErrorType.NOT_INITIALIZED),
    (Mechanism.LOOP_TERMINATION, ErrorType.NOT_INITIALIZED),
    (Mechanism.BAD_VALUE, ErrorType.ARGS_MISMATCH),
    (Mechanism.RUNTIME, ErrorType.ERROR),
    (Mechanism.OUTPUT_DIVERGENCE, ErrorType.RESULT_MISMATCH),
])
def test_mechanism_error_type(mechanism, etype):
    assert mechanism.error_type is etype


def test_deviation_rejects_incoherent_mechanism():
    with pytest.raises(ValueError):
        Deviation(ErrorCategory(ToolKind.OCR, ErrorType.ERROR), Mechanism.OMISSION, 0)
    with pytest.raises(ValueError):
        Deviation(ErrorCategory(ToolKind.OCR, ErrorType.ERROR), Mechanism.RUNTIME, -1)


def test_tool_names():
    assert [t.tool_name for t in ToolKind] == ["ocr_tool", "db_query_tool", "db_update_tool"]
    assert ToolKind.from_tool_name("db_update_tool") is ToolKind.DB_UPDATE
    assert ToolKind.from_tool_name("update_db") is None
