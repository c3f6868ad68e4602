"""Masked, smoothed, damped EM for transition matrices over set-valued labels.

An observation ``I -> J`` pairs two label sets. Each one is explained by a
single latent base edge ``(a, b)`` with ``a in I`` and ``b in J``; the set's
mass is split among its members by a mixing measure (uniform here). The
estimator alternates edge responsibilities with a Dirichlet-smoothed,
row-normalised update restricted to a structural mask, and damps the update
towards the previous iterate.

Observations may be given as :class:`~metareason.taxonomy.TransitionObservation`
or as plain ``(source_states, target_states)`` index pairs, which lets the
same code run on toy state spaces.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import (
    LikelihoodUndefined,
    MissingPolarity,
    PriorFallbackWarning,
    SchemaError,
    ShapeError,
)
from .taxonomy import (
    NUM_STATES,
    START,
    Polarity,
    ReasoningTrace,
    observations_of,
)


def build_structural_mask(num_states: int = NUM_STATES) -> np.ndarray:
    """Allowed-transition mask: nothing enters start, stop only loops to itself."""
    mask = np.ones((num_states, num_states), dtype=np.int8)
    mask[:, START] = 0
    mask[num_states - 1, :] = 0
    mask[num_states - 1, num_states - 1] = 1
    return mask


def full_mask(num_states: int) -> np.ndarray:
    return np.ones((num_states, num_states), dtype=np.int8)


class MixingMeasure(str, Enum):
    UNIFORM = "uniform"

    def weight(self, states: Sequence[int], member: int) -> float:
        if self is MixingMeasure.UNIFORM:
            return 1.0 / len(states)
        raise NotImplementedError(self)


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """A row-stochastic matrix paired with the mask it lives under."""

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        mask = np.array(self.mask, dtype=np.int8)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ShapeError(f"transition matrix must be square, got {values.shape}")
        if mask.shape != values.shape:
            raise ShapeError(f"mask shape {mask.shape} does not match matrix {values.shape}")
        values.flags.writeable = False
        mask.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def row_uniform(cls, mask: np.ndarray) -> "TransitionMatrix":
        mask = np.asarray(mask, dtype=np.int8)
        allowed = mask.sum(axis=1, keepdims=True).astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            values = np.where(allowed > 0, mask / allowed, 0.0)
        return cls(values, mask)

    @property
    def num_states(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, idx):
        return self.values[idx]

    def violations(self, atol: float = 1e-9) -> list[str]:
        """Describe every broken stochastic/mask invariant (empty when valid)."""
        out = []
        if np.any(self.values < 0):
            out.append("negative entries")
        if np.any(self.values[self.mask == 0] != 0):
            out.append("nonzero entries where the mask forbids")
        live = self.mask.sum(axis=1) > 0
        sums = self.values.sum(axis=1)
        bad = np.flatnonzero(live & (np.abs(sums - 1.0) > atol))
        if bad.size:
            out.append(f"rows {bad.tolist()} do not sum to 1")
        return out


def _as_pair(obs) -> tuple[tuple[int, ...], tuple[int, ...]]:
    if hasattr(obs, "index_pair"):
        return obs.index_pair()
    src, dst = obs
    return tuple(src), tuple(dst)


def candidate_edges(source: Iterable[int], target: Iterable[int], mask: np.ndarray) -> list[tuple[int, int]]:
    """Latent base edges between two label sets that the mask allows."""
    return [(a, b) for a in source for b in target if mask[a, b]]


def pairwise_prob(source, target, P: TransitionMatrix, rho: MixingMeasure = MixingMeasure.UNIFORM) -> float:
    """Probability of the set-to-set move ``source -> target`` under ``P``."""
    src, dst = tuple(source), tuple(target)
    total = 0.0
    for a, b in candidate_edges(src, dst, P.mask):
        total += rho.weight(src, a) * P.values[a, b] * rho.weight(dst, b)
    return total


@dataclass
class _Compiled:
    """Observations flattened into one row per candidate edge."""

    obs_id: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    rho_src: np.ndarray
    rho_dst: np.ndarray
    n_pairs: np.ndarray
    num_obs: int


def _compile(observations, mask: np.ndarray, rho: MixingMeasure) -> _Compiled:
    obs_id, src, dst, rs, rd = [], [], [], [], []
    n_pairs = []
    for m, obs in enumerate(observations):
        I, J = _as_pair(obs)
        pairs = candidate_edges(I, J, mask)
        n_pairs.append(len(pairs))
        for a, b in pairs:
            obs_id.append(m)
            src.append(a)
            dst.append(b)
            rs.append(rho.weight(I, a))
            rd.append(rho.weight(J, b))
    return _Compiled(
        obs_id=np.asarray(obs_id, dtype=np.int64),
        src=np.asarray(src, dtype=np.int64),
        dst=np.asarray(dst, dtype=np.int64),
        rho_src=np.asarray(rs, dtype=np.float64),
        rho_dst=np.asarray(rd, dtype=np.float64),
        n_pairs=np.asarray(n_pairs, dtype=np.int64),
        num_obs=len(n_pairs),
    )


def _observation_probs(comp: _Compiled, P: np.ndarray) -> np.ndarray:
    terms = comp.rho_src * P[comp.src, comp.dst] * comp.rho_dst
    return np.bincount(comp.obs_id, weights=terms, minlength=comp.num_obs)


def log_likelihood(observations, P: TransitionMatrix, rho: MixingMeasure = MixingMeasure.UNIFORM) -> float:
    """Observed-data log-likelihood of a corpus of set-to-set transitions."""
    observations = list(observations)
    if not observations:
        return 0.0
    comp = _compile(observations, P.mask, rho)
    probs = _observation_probs(comp, P.values)
    bad = np.flatnonzero(probs <= 0)
    if bad.size:
        raise LikelihoodUndefined(int(bad[0]), observations[bad[0]])
    return float(np.sum(np.log(probs)))


def map_objective(observations, P: TransitionMatrix, smoothing_alpha: float) -> float:
    """Log-likelihood plus the Dirichlet smoothing term ``alpha * sum_A log P``."""
    allowed = P.mask.astype(bool)
    prior = 0.0
    if smoothing_alpha:
        prior = smoothing_alpha * float(np.sum(np.log(P.values[allowed])))
    return log_likelihood(observations, P) + prior


@dataclass(frozen=True)
class EMConfig:
    max_iter: int = 5
    tol: float = 1e-6
    dp: float = 0.6
    smoothing_alpha: float = 0.1

    def __post_init__(self):
        if self.max_iter < 1:
            raise SchemaError("max_iter must be positive")
        if not 0.0 < self.dp <= 1.0:
            raise SchemaError("dp must lie in (0, 1]")
        if self.smoothing_alpha < 0:
            raise SchemaError("smoothing_alpha must be non-negative")
        if self.tol < 0:
            raise SchemaError("tol must be non-negative")


@dataclass(frozen=True, eq=False)
class EMResult:
    matrix: TransitionMatrix
    soft_counts: np.ndarray
    posterior: np.ndarray
    iterations_run: int
    final_delta: float
    config: EMConfig
    prior_fallback: bool = False
    history: tuple[np.ndarray, ...] = field(default=(), repr=False)


def em_estimate(
    observations,
    mask: np.ndarray | None = None,
    cfg: EMConfig = EMConfig(),
    *,
    rho: MixingMeasure = MixingMeasure.UNIFORM,
    record_history: bool = False,
) -> EMResult:
    """Estimate a transition matrix from set-valued transition observations.

    Parameters
    ----------
    observations : iterable
        ``TransitionObservation`` objects or ``(source_states, target_states)``
        pairs.
    mask : numpy.ndarray, optional
        0/1 allowed-transition mask; defaults to the 17-state structural mask.
    cfg : EMConfig
        Iteration cap, tolerance, damping factor and smoothing pseudo-count.
    record_history : bool
        Keep a copy of ``P`` after every iteration in ``EMResult.history``.

    Returns
    -------
    EMResult
        Final matrix, soft counts of the last E-step and the posterior
        pseudo-counts ``C + alpha * A``.
    """
    if mask is None:
        mask = build_structural_mask()
    mask = np.asarray(mask, dtype=np.int8)
    K = mask.shape[0]
    allowed = mask.astype(bool)
    prior_counts = cfg.smoothing_alpha * mask.astype(np.float64)

    observations = list(observations)
    P = TransitionMatrix.row_uniform(mask).values.copy()
    C = np.zeros((K, K))

    if not observations:
        warnings.warn("no observations; returning the row-uniform prior", PriorFallbackWarning, stacklevel=2)
        return EMResult(
            matrix=TransitionMatrix(P, mask),
            soft_counts=C,
            posterior=C + prior_counts,
            iterations_run=0,
            final_delta=0.0,
            config=cfg,
            prior_fallback=True,
            history=(P.copy(),) if record_history else (),
        )

    comp = _compile(observations, mask, rho)
    live = comp.n_pairs > 0
    fallback = np.zeros(comp.num_obs)
    fallback[live] = 1.0 / comp.n_pairs[live]
    flat_edge = comp.src * K + comp.dst

    history = [P.copy()] if record_history else []
    last = P.copy()
    delta = float("inf")
    iterations = 0
    for t in range(1, cfg.max_iter + 1):
        iterations = t
        # E-step; the target-side mixing weight is constant per observation and cancels
        w = comp.rho_src * P[comp.src, comp.dst]
        s = np.bincount(comp.obs_id, weights=w, minlength=comp.num_obs)
        positive = s > 0
        with np.errstate(invalid="ignore", divide="ignore"):
            r = np.where(positive[comp.obs_id], w / s[comp.obs_id], fallback[comp.obs_id])
        C = np.bincount(flat_edge, weights=r, minlength=K * K).reshape(K, K)

        # M-step
        num = np.where(allowed, C + prior_counts, 0.0)
        den = num.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            P_new = np.where(allowed & (den > 0), num / den, 0.0)
        # rows without mass (no counts, no smoothing) keep their previous value
        P_new[den[:, 0] <= 0] = P[den[:, 0] <= 0]

        P = (1.0 - cfg.dp) * P + cfg.dp * P_new
        if record_history:
            history.append(P.copy())
        delta = float(np.max(np.abs(P - last)))
        if delta < cfg.tol:
            break
        last = P.copy()

    return EMResult(
        matrix=TransitionMatrix(P, mask),
        soft_counts=C,
        posterior=C + prior_counts,
        iterations_run=iterations,
        final_delta=delta,
        config=cfg,
        history=tuple(history),
    )


def empirical_frequencies(observations, mask: np.ndarray, smoothing_alpha: float = 0.0) -> np.ndarray:
    """Smoothed row frequencies of singleton transitions (closed-form MLE/MAP)."""
    K = mask.shape[0]
    counts = np.zeros((K, K))
    for obs in observations:
        (a,), (b,) = _as_pair(obs)
        counts[a, b] += 1
    num = np.where(mask.astype(bool), counts + smoothing_alpha * mask, 0.0)
    den = num.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / den, 0.0)


class MatrixSet(NamedTuple):
    pooled: TransitionMatrix
    positive: TransitionMatrix
    negative: TransitionMatrix

    def for_polarity(self, polarity: Polarity) -> TransitionMatrix:
        return self.positive if polarity is Polarity.POSITIVE else self.negative


class PartitionedEstimate(NamedTuple):
    pooled: EMResult
    positive: EMResult
    negative: EMResult

    def matrices(self) -> MatrixSet:
        return MatrixSet(self.pooled.matrix, self.positive.matrix, self.negative.matrix)


def estimate_partitioned(
    corpus: Sequence[ReasoningTrace],
    cfg: EMConfig = EMConfig(),
    mask: np.ndarray | None = None,
) -> PartitionedEstimate:
    """Fit one matrix on all traces and one on each polarity subset."""
    if mask is None:
        mask = build_structural_mask()
    for trace in corpus:
        if trace.polarity is None:
            raise MissingPolarity(f"trace {trace.id!r} has no polarity")
    pos = [t for t in corpus if t.polarity is Polarity.POSITIVE]
    neg = [t for t in corpus if t.polarity is Polarity.NEGATIVE]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PriorFallbackWarning)
        results = [em_estimate(observations_of(group), mask, cfg) for group in (corpus, pos, neg)]
    for name, res in zip(("pooled", "positive", "negative"), results):
        if res.prior_fallback:
            warnings.warn(f"{name} subset is empty; using the prior", PriorFallbackWarning, stacklevel=2)
    return PartitionedEstimate(*results)


def is_absorbing_stop(P: TransitionMatrix) -> bool:
    stop = P.num_states - 1
    row = P.values[stop]
    expect = np.zeros_like(row)
    expect[stop] = 1.0
    return bool(np.array_equal(row, expect))
