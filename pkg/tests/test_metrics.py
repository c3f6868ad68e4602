import json
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from metareason.errors import EmptyBatch, InvalidK, MissingGold, SchemaError
from metareason.metrics import (
    ClaimStats,
    EMFlags,
    accuracy,
    answer_only_accuracy,
    em_flags,
    evaluate,
    f1_at_k,
    median_k,
    misleading,
    normalize,
)

FIXTURE = Path(__file__).parent / "data" / "metrics_fixture.jsonl"


def load_fixture():
    return [json.loads(line) for line in FIXTURE.read_text().splitlines()]


def test_normalize():
    assert normalize("  Mount\tEverest!! ") == "mount everest"
    assert normalize("...") == ""


@pytest.mark.parametrize(
    "think, answer, expected",
    [
        ("so the capital is Paris, clearly", "Paris", (1, 1, 1)),
        ("so the capital is Paris, clearly", "London", (1, 0, 0)),
        ("the capital of France", "Paris", (0, 1, 0)),
    ],
)
def test_em_flag_examples(think, answer, expected):
    assert em_flags(["Paris"], think, answer).as_tuple() == expected


def test_em_flags_aliases_and_strict_mode():
    assert em_flags(["Eric Blair", "George Orwell"], "orwell wrote it", "george orwell").em_a == 1
    assert em_flags(["Paris"], "Paris", "paris", strict=True).em_a == 0
    with pytest.raises(MissingGold):
        em_flags([], "x", "y")


def test_fixture_cells_and_rates():
    rows = load_fixture()
    flags = [em_flags(r["gold_answers"], r["think_text"], r["answer_text"]) for r in rows]
    assert [(f.em_t, f.em_a) for f in flags] == [(r["expected_em_t"], r["expected_em_a"]) for r in rows]
    cells = {c: sum((f.em_t, f.em_a) == c for f in flags) for c in [(1, 1), (1, 0), (0, 1), (0, 0)]}
    assert cells == {(1, 1): 4, (1, 0): 3, (0, 1): 2, (0, 0): 3}
    assert accuracy(flags) == 4 / 12
    assert misleading(flags) == 5 / 12
    assert answer_only_accuracy(flags) == 6 / 12


def test_rate_examples():
    a, b, c, d = EMFlags(1, 1), EMFlags(1, 0), EMFlags(0, 1), EMFlags(0, 0)
    assert accuracy([a, b]) == 0.5 and accuracy([a, a]) == 1.0
    assert misleading([b]) == 1.0 and misleading([a, d]) == 0.0
    assert misleading([b, c, a, d]) == 0.5
    for fn in (accuracy, misleading, answer_only_accuracy):
        with pytest.raises(EmptyBatch):
            fn([])


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=50))
def test_rates_match_recount_and_cells_partition(bits):
    flags = [EMFlags(t, a) for t, a in bits]
    n = len(bits)
    both = sum(1 for t, a in bits if t == 1 and a == 1)
    xor = sum(1 for t, a in bits if t != a)
    neither = sum(1 for t, a in bits if t == 0 and a == 0)
    assert accuracy(flags) == both / n
    assert misleading(flags) == xor / n
    assert both + xor + neither == n
    assert all(f.em_both <= f.em_t and f.em_both <= f.em_a for f in flags)


def test_f1_examples():
    assert f1_at_k(ClaimStats(0, 12, 8)) == 0.0
    assert f1_at_k(ClaimStats(8, 10, 8)) == pytest.approx(0.8889, abs=1e-4)
    assert f1_at_k(ClaimStats(6, 6, 6)) == 1.0
    with pytest.raises(InvalidK):
        f1_at_k(ClaimStats(1, 2, 0))
    with pytest.raises(SchemaError):
        ClaimStats(3, 2, 1)


@given(st.integers(1, 30), st.integers(1, 20), st.integers(1, 4))
def test_f1_monotone_and_scale_invariant(total, k, c):
    scores = [f1_at_k(ClaimStats(s, total, k)) for s in range(total + 1)]
    assert all(b >= a for a, b in zip(scores, scores[1:]))
    for s in range(total + 1):
        assert f1_at_k(ClaimStats(c * s, c * total, c * k)) == pytest.approx(scores[s], abs=1e-12)


def test_median_k():
    assert median_k([3, 9, 5]) == 5
    assert median_k([4, 5]) == 5
    assert median_k([0]) == 1
    with pytest.raises(EmptyBatch):
        median_k([])


def test_evaluate_report():
    rows = load_fixture()
    gold = {r["id"]: r["gold_answers"] for r in rows}
    claims = [{"id": "r01", "supported": 8, "total_claims": 10}, {"id": "r02", "supported": 0, "total_claims": 6}]
    report = evaluate(rows, gold, claims, k=8).to_json()
    assert report["n"] == 12 and report["Acc"] == 4 / 12 and report["Mis"] == 5 / 12
    assert report["F1@K"] == pytest.approx((2 * 0.8 / 1.8) / 2)
    assert report["#Claims"] == 8.0 and report["K"] == 8
    recount = sum(r["em_both"] for r in report["per_record"]) / 12
    assert recount == report["Acc"]
    with pytest.raises(MissingGold):
        evaluate([{"id": "zz", "think_text": "", "answer_text": ""}], gold)
