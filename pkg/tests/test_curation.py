import itertools

import pytest
from hypothesis import given, strategies as st

from metareason.curation import (
    DISCARD,
    CandidatePool,
    DrawRecord,
    classify_polarity,
    curate,
    dedupe,
    intersect_draws,
)
from metareason.errors import MissingDraws, SchemaError
from metareason.taxonomy import Polarity, ReasoningTrace, Segment


def trace(tid, question, n_segments=6, tokens=100, source="nq_open"):
    segs = tuple(Segment(i, "x", tokens) for i in range(n_segments))
    return ReasoningTrace(tid, question, ("a",), segs, source=source)


def draws(*bits):
    return [DrawRecord(i, on, off) for i, (on, off) in enumerate(bits)]


@pytest.mark.parametrize(
    "z_on, z_off, expected",
    [(1, 0, Polarity.POSITIVE), (0, 1, Polarity.NEGATIVE), (1, 1, DISCARD), (0, 0, DISCARD)],
)
def test_classify_polarity_truth_table(z_on, z_off, expected):
    assert classify_polarity(z_on, z_off) is expected


def test_intersect_examples():
    assert intersect_draws(draws((1, 0), (1, 0), (1, 0))) is Polarity.POSITIVE
    assert intersect_draws(draws((0, 1), (0, 1), (0, 1))) is Polarity.NEGATIVE
    assert intersect_draws(draws((1, 0), (1, 0), (0, 0))) is DISCARD
    with pytest.raises(MissingDraws):
        intersect_draws([])


def test_draw_bits_validated():
    with pytest.raises(SchemaError):
        DrawRecord(0, 2, 0)


bit_pairs = st.tuples(st.integers(0, 1), st.integers(0, 1))


@given(st.lists(bit_pairs, min_size=1, max_size=5))
def test_intersection_nondiscard_means_unanimous(bits):
    result = intersect_draws(draws(*bits))
    per_draw = {classify_polarity(*b) for b in bits}
    if result is not DISCARD:
        assert per_draw == {result}
    else:
        assert len(per_draw) > 1 or per_draw == {DISCARD}


def test_dedupe_collapses_normalised_questions():
    pool = CandidatePool(((trace("1", "Who wrote X?"), ()), (trace("2", "who wrote  x"), ()), (trace("3", "Other"), ())))
    out = dedupe(pool)
    assert [t.id for t in out.traces] == ["1", "3"]
    assert dedupe(out).traces == out.traces
    distinct = CandidatePool(((trace("1", "a"), ()), (trace("2", "b"), ())))
    assert dedupe(distinct).traces == distinct.traces


def test_curate_pipeline_and_stats():
    traces = [
        trace("p1", "Q one", source="nq_open"),
        trace("p2", "q ONE!", source="nq_open"),       # duplicate of p1
        trace("n1", "Q two", source="sciq"),
        trace("d1", "Q three"),                        # discarded
        trace("s1", "Q four", n_segments=3),           # too few segments
        trace("m1", "Q five"),                         # no draws
    ]
    pos, neg = draws((1, 0), (1, 0), (1, 0)), draws((0, 1), (0, 1), (0, 1))
    by_id = {"p1": pos, "p2": pos, "n1": neg, "d1": draws((1, 0), (0, 1), (1, 0)), "s1": pos}
    report = curate(traces, by_id)
    assert [t.id for t in report.pool.traces] == ["p1", "n1"]
    assert report.pool.traces[0].polarity is Polarity.POSITIVE
    assert (report.discarded, report.duplicates, report.length_filtered, report.missing_draws) == (1, 1, 1, 1)
    assert report.pool.stats == {"nq_open": {"positive": 1}, "sciq": {"negative": 1}}
    assert sum(report.pool.totals().values()) == len(report.pool)


@given(st.lists(st.tuples(st.sampled_from(["a", "b", "c", "A!", "b "]), st.sampled_from(["x", "y"])), max_size=12))
def test_dedupe_idempotent_and_shrinking(rows):
    pool = CandidatePool(tuple((trace(str(i), q, source=s), ()) for i, (q, s) in enumerate(rows)))
    once = dedupe(pool)
    assert len(once) <= len(pool)
    assert dedupe(once).traces == once.traces
    # stats are a recount
    recount = {}
    for t in once.traces:
        recount.setdefault(t.source, {}).setdefault("unlabeled", 0)
        recount[t.source]["unlabeled"] += 1
    assert once.stats == dict(sorted(recount.items()))


def test_all_draw_combinations_for_three_draws():
    # every (z_on, z_off) per draw over 3 draws: 4^3 combinations
    for combo in itertools.product([(0, 0), (0, 1), (1, 0), (1, 1)], repeat=3):
        result = intersect_draws(draws(*combo))
        if all(c == (1, 0) for c in combo):
            assert result is Polarity.POSITIVE
        elif all(c == (0, 1) for c in combo):
            assert result is Polarity.NEGATIVE
        else:
            assert result is DISCARD
