import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from metareason.errors import (
    LikelihoodUndefined,
    MissingPolarity,
    PriorFallbackWarning,
    SchemaError,
    ShapeError,
)
from metareason.estimation import (
    EMConfig,
    TransitionMatrix,
    build_structural_mask,
    em_estimate,
    empirical_frequencies,
    estimate_partitioned,
    is_absorbing_stop,
    log_likelihood,
    map_objective,
    pairwise_prob,
)
from metareason.io import em_result_to_json, load_em_result, save_em_result
from metareason.synthetic import GeneratorConfig, random_ground_truth, sample_trajectories
from metareason.taxonomy import LabelSet, Polarity, ReasoningTrace, Segment, TransitionObservation

MASK = build_structural_mask()


def obs(src, dst):
    return TransitionObservation(LabelSet.of(*src) if src else LabelSet.start(), LabelSet.of(*dst) if dst else LabelSet.stop())


def test_structural_mask():
    assert MASK.shape == (17, 17) and int(MASK.sum()) == 257
    assert MASK[16, 1] == 0 and MASK[1, 0] == 0 and MASK[16, 16] == 1
    assert MASK[0, 16] == 1 and MASK[:, 0].sum() == 0


def test_row_uniform_is_valid():
    P = TransitionMatrix.row_uniform(MASK)
    assert P.violations() == []
    assert is_absorbing_stop(P)
    assert math.isclose(P[1, 5], 1 / 16)
    with pytest.raises(ValueError):
        P.values[1, 1] = 0.0


def test_matrix_shape_checks():
    with pytest.raises(ShapeError):
        TransitionMatrix(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ShapeError):
        TransitionMatrix(np.eye(3), np.ones((2, 2)))


def test_pairwise_prob_expansions():
    P = TransitionMatrix.row_uniform(MASK)
    rng = np.random.default_rng(0)
    vals = rng.random((17, 17)) * MASK
    vals /= np.where(vals.sum(1, keepdims=True) > 0, vals.sum(1, keepdims=True), 1)
    P = TransitionMatrix(vals, MASK)
    a, b, c, d = 1, 2, 3, 4
    assert pairwise_prob((a,), (b,), P) == P[a, b]
    assert math.isclose(pairwise_prob((a,), (b, c), P), 0.5 * (P[a, b] + P[a, c]), rel_tol=1e-12)
    assert math.isclose(
        pairwise_prob((a, d), (b, c), P), 0.25 * (P[a, b] + P[a, c] + P[d, b] + P[d, c]), rel_tol=1e-12
    )


def test_pairwise_prob_ignores_forbidden_entries():
    vals = np.full((17, 17), 0.3)
    P1 = TransitionMatrix(vals * MASK, MASK)
    vals2 = vals.copy()
    vals2[MASK == 0] = 99.0
    P2 = TransitionMatrix(vals2, MASK)
    # (framing) -> (start, retrieval) only the allowed edge counts
    assert pairwise_prob((1,), (0, 8), P1) == pairwise_prob((1,), (0, 8), P2)


def test_log_likelihood_basics():
    P = TransitionMatrix.row_uniform(MASK)
    assert log_likelihood([], P) == 0.0
    assert math.isclose(log_likelihood([obs(["framing"], ["retrieval"])], P), math.log(1 / 16), rel_tol=1e-12)


def test_log_likelihood_is_order_free_sum():
    rng = random.Random(3)
    P = em_estimate([obs(["framing"], ["retrieval"])], cfg=EMConfig(max_iter=2)).matrix
    labels = ["framing", "retrieval", "synthesis", "analogy", "evaluation"]
    data = [obs(rng.sample(labels, rng.randint(1, 2)), rng.sample(labels, rng.randint(1, 2))) for _ in range(1000)]
    terms = [math.log(pairwise_prob(o.source.states, o.target.states, P)) for o in data]
    expected = math.fsum(terms)
    shuffled = data[:]
    rng.shuffle(shuffled)
    assert abs(log_likelihood(data, P) - expected) < 1e-9
    assert abs(log_likelihood(shuffled, P) - expected) < 1e-9


def test_log_likelihood_undefined_reports_observation():
    vals = np.array(TransitionMatrix.row_uniform(MASK).values)
    vals[1] = 0
    vals[1, 16] = 1.0
    P = TransitionMatrix(vals, MASK)
    data = [obs([], ["framing"]), obs(["framing"], ["retrieval"])]
    with pytest.raises(LikelihoodUndefined) as err:
        log_likelihood(data, P)
    assert err.value.index == 1


@pytest.mark.parametrize("n", [1, 3, 20])
def test_em_closed_form_for_repeated_singleton(n):
    data = [obs(["framing"], ["retrieval"])] * n
    res = em_estimate(data, cfg=EMConfig(dp=1.0, max_iter=1))
    assert abs(res.matrix[1, 8] - (n + 0.1) / (n + 1.6)) < 1e-12
    assert abs(res.matrix[1, 2] - 0.1 / (n + 1.6)) < 1e-12
    assert res.matrix.violations() == []


def test_em_zero_observations_returns_prior():
    with pytest.warns(PriorFallbackWarning):
        res = em_estimate([])
    assert res.prior_fallback
    assert np.array_equal(res.matrix.values, TransitionMatrix.row_uniform(MASK).values)


def test_em_config_validation():
    for kw in ({"dp": 0.0}, {"dp": 1.5}, {"max_iter": 0}, {"smoothing_alpha": -1}, {"tol": -1}):
        with pytest.raises(SchemaError):
            EMConfig(**kw)


def test_em_invariants_every_iteration_and_determinism():
    data = sample_trajectories(random_ground_truth(1), GeneratorConfig(seed=1, trajectory_count=300, pair_probability=0.4))
    cfg = EMConfig(max_iter=10, tol=0.0)
    res = em_estimate(data, cfg=cfg, record_history=True)
    assert len(res.history) == res.iterations_run + 1
    for P in res.history:
        assert TransitionMatrix(P, MASK).violations() == []
        assert np.array_equal(P[16], np.eye(17)[16])
    again = em_estimate(data, cfg=cfg)
    assert np.array_equal(res.matrix.values, again.matrix.values)
    assert np.array_equal(res.posterior, res.soft_counts + 0.1 * MASK)


def test_em_stops_on_tolerance():
    data = [obs(["framing"], ["retrieval"])]
    res = em_estimate(data, cfg=EMConfig(max_iter=100, tol=1e-6, dp=1.0))
    assert res.iterations_run == 2 and res.final_delta < 1e-6


def test_empirical_frequencies_match_em_on_singletons():
    data = sample_trajectories(random_ground_truth(2), GeneratorConfig(seed=2, trajectory_count=200))
    res = em_estimate(data, cfg=EMConfig(dp=1.0, max_iter=1))
    assert np.allclose(res.matrix.values, empirical_frequencies(data, MASK, 0.1), atol=1e-12)


labels = st.sampled_from(["framing", "backtracking", "retrieval", "synthesis"])
label_set = st.lists(labels, min_size=1, max_size=2, unique=True)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(label_set, label_set), min_size=1, max_size=40))
def test_map_objective_monotone_at_full_step(pairs):
    data = [obs(a, b) for a, b in pairs]
    res = em_estimate(data, cfg=EMConfig(dp=1.0, max_iter=15, tol=0.0), record_history=True)
    values = [map_objective(data, TransitionMatrix(P, MASK), 0.1) for P in res.history]
    assert all(b >= a - 1e-9 for a, b in zip(values, values[1:]))


def _trace(tid, polarity, label_seq):
    segs = tuple(Segment(i, "x", 1) for i in range(len(label_seq)))
    return ReasoningTrace(tid, "q", ("a",), segs, labels=tuple(LabelSet.of(*ls) for ls in label_seq), polarity=polarity)


def test_partitioned_only_positives():
    corpus = [_trace("1", Polarity.POSITIVE, [["framing"], ["retrieval"]]),
              _trace("2", Polarity.POSITIVE, [["framing", "synthesis"]])]
    with pytest.warns(PriorFallbackWarning):
        part = estimate_partitioned(corpus)
    assert np.array_equal(part.pooled.matrix.values, part.positive.matrix.values)
    assert part.negative.prior_fallback


def test_partitioned_requires_polarity():
    with pytest.raises(MissingPolarity):
        estimate_partitioned([_trace("1", None, [["framing"]])])


def test_partitioned_disjoint_clusters_differ():
    pos = [_trace(f"p{i}", Polarity.POSITIVE, [["framing"], ["retrieval"], ["synthesis"]]) for i in range(20)]
    neg = [_trace(f"n{i}", Polarity.NEGATIVE, [["framing"], ["backtracking"], ["evaluation"]]) for i in range(20)]
    m = estimate_partitioned(pos + neg).matrices()
    assert np.argmax(m.positive[1]) == 8 and np.argmax(m.negative[1]) == 2
    assert m.for_polarity(Polarity.NEGATIVE) is m.negative


def test_pooled_matrix_leans_toward_larger_subset():
    pos = [_trace(f"p{i}", Polarity.POSITIVE, [["framing"], ["retrieval"]]) for i in range(40)]
    neg = [_trace(f"n{i}", Polarity.NEGATIVE, [["framing"], ["backtracking"]]) for i in range(20)]
    m = estimate_partitioned(pos + neg).matrices()
    d_pos = np.linalg.norm(m.pooled.values - m.positive.values)
    d_neg = np.linalg.norm(m.pooled.values - m.negative.values)
    assert d_pos < d_neg


def test_em_result_json_round_trip(tmp_path):
    data = sample_trajectories(random_ground_truth(3), GeneratorConfig(seed=3, trajectory_count=50, pair_probability=0.3))
    res = em_estimate(data)
    path = tmp_path / "P.json"
    save_em_result(path, res)
    loaded = load_em_result(path)
    assert np.array_equal(loaded.matrix.values, res.matrix.values)
    assert np.array_equal(loaded.matrix.mask, res.matrix.mask)
    assert np.array_equal(loaded.posterior, res.posterior)
    assert loaded.config == res.config
    doc = em_result_to_json(res)
    assert doc["states"][0] == "<start>" and doc["states"][-1] == "<stop>"
