import collections

import pytest

from tooldiag.scenario import (
    Dataset,
    Modality,
    Variant,
    generate_dataset,
    golden_plan,
    oracle_final_state,
)
from tooldiag.taxonomy import ToolKind
from tooldiag.tools import Status, ocr_extract


@pytest.fixture(scope="module")
def full_scale():
    return generate_dataset(42, 1980)


def test_modality_split(full_scale):
    counts = collections.Counter(t.modality for t in full_scale)
    assert counts == {Modality.VISION: 990, Modality.TEXT: 990}


def test_same_seed_same_bytes(full_scale):
    assert generate_dataset(42, 1980).to_jsonl() == full_scale.to_jsonl()
    assert generate_dataset(43, 1980).to_jsonl() != full_scale.to_jsonl()


def test_variant_quota_small():
    ds = generate_dataset(42, 10)
    per = collections.Counter((t.modality, t.truth.variant) for t in ds)
    for modality in Modality:
        assert per[(modality, Variant.MATCH)] == 4
        assert per[(modality, Variant.MISMATCH)] == 1


def test_variant_quota_full(full_scale):
    per = collections.Counter((t.modality, t.truth.variant) for t in full_scale)
    for modality in Modality:
        assert per[(modality, Variant.MISMATCH)] == 198


@pytest.mark.parametrize("count", [0, -2, 3, 1981])
def test_bad_count(count):
    with pytest.raises(ValueError):
        generate_dataset(1, count)


def test_instance_invariants(full_scale):
    for task in full_scale:
        inst, truth = task.instance, task.truth
        ids = [r.invoice_id for r in inst.store_snapshot]
        assert len(ids) == len(set(ids))
        assert truth.target_invoice_id in ids
        assert 5 <= len(ids) <= 10
        assert (inst.email_text is not None) == (inst.modality is Modality.TEXT)
        assert (inst.document is not None) == (inst.modality is Modality.VISION)
        target = next(r for r in inst.store_snapshot if r.invoice_id == truth.target_invoice_id)
        assert target.status is Status.PENDING
        same = target.amount_minor == truth.expected_amount_minor
        assert same == (truth.variant is Variant.MATCH)
        assert truth.expected_status is (Status.RECONCILED if same else Status.DISPUTED)


def test_document_decodes_to_expected_fields(full_scale):
    for task in full_scale.subset(Modality.VISION, limit=100):
        assert ocr_extract(task.instance.document).payload == task.truth.expected_fields


def test_plans(full_scale):
    for task in full_scale.subset(limit=50):
        plan = task.truth.expected_plan
        assert plan == golden_plan(task.instance, task.truth)
        expected = [ToolKind.DB_QUERY, ToolKind.DB_UPDATE]
        if task.modality is Modality.VISION:
            expected.insert(0, ToolKind.OCR)
        assert list(plan.tools) == expected
        assert plan.stages[-1].expected_output.payload["new_status"] == task.truth.expected_status.value


def test_oracle_final_state(full_scale):
    task = next(t for t in full_scale if t.truth.variant is Variant.MISMATCH)
    store = oracle_final_state(task.instance, task.truth)
    for rec in task.instance.store_snapshot:
        after = store.records[rec.invoice_id]
        if rec.invoice_id == task.truth.target_invoice_id:
            assert after.status is Status.DISPUTED
        else:
            assert after == rec


def test_jsonl_roundtrip(tmp_path):
    ds = generate_dataset(5, 12)
    path = tmp_path / "d.jsonl"
    ds.write(path)
    lines = path.read_text().splitlines()
    assert len(lines) == 13
    back = Dataset.read(path)
    assert back == ds
    assert back.to_jsonl() == ds.to_jsonl()


def test_read_rejects_headerless():
    with pytest.raises(ValueError):
        Dataset.from_jsonl('{"instance": {}}\n')


def test_subset():
    ds = generate_dataset(5, 12)
    sub = ds.subset(Modality.TEXT, limit=2)
    assert [t.modality for t in sub] == [Modality.TEXT, Modality.TEXT]
    assert sub.seed == ds.seed
