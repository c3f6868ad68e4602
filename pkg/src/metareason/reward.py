"""Transition-advantage weights, weighted implicit rewards and KTO-style losses.

Everything here works on precomputed log-probability sums; no model is
evaluated. A segment's log-ratio is the sum over its tokens of
``log pi_theta - log pi_ref``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

from .errors import (
    AlignmentError,
    DegenerateWeightWarning,
    EmptyBatch,
    MissingPolarity,
    SchemaError,
    ShapeError,
)
from .estimation import MatrixSet, TransitionMatrix, pairwise_prob
from .taxonomy import LabelSet, Polarity, ReasoningTrace, to_state_sequence


@dataclass(frozen=True)
class ClipBounds:
    lower: float = 0.2
    upper: float = 5.0

    def __post_init__(self):
        if not 0.0 < self.lower <= 1.0 <= self.upper:
            raise SchemaError(f"clip bounds need 0 < lower <= 1 <= upper, got ({self.lower}, {self.upper})")

    def apply(self, x: float) -> float:
        return min(max(x, self.lower), self.upper)

    @classmethod
    def parse(cls, text: str) -> "ClipBounds":
        """Parse ``"lower:upper"``."""
        try:
            lo, hi = text.split(":")
            return cls(float(lo), float(hi))
        except ValueError:
            raise SchemaError(f"clip bounds must look like 0.2:5.0, got {text!r}") from None


@dataclass(frozen=True)
class KTOParams:
    beta: float = 0.1
    lambda_c: float = 1.0
    lambda_r: float = 1.5
    lambda_y: float | None = None
    z0: float = 0.0
    z0_decay: float = 0.9

    def __post_init__(self):
        if self.lambda_y is None:
            object.__setattr__(self, "lambda_y", max(self.lambda_c, self.lambda_r))
        if self.beta <= 0 or self.lambda_c <= 0 or self.lambda_r <= 0:
            raise SchemaError("beta, lambda_c and lambda_r must be positive")
        if self.lambda_y < max(self.lambda_c, self.lambda_r):
            raise SchemaError("lambda_y must be at least max(lambda_c, lambda_r) to keep the loss non-negative")
        if not 0.0 <= self.z0_decay < 1.0:
            raise SchemaError("z0_decay must lie in [0, 1)")


@dataclass(frozen=True)
class LogRatioRecord:
    trace_id: str
    segment_logratios: tuple[float, ...]
    answer_logratio: float
    think_kl_estimate: float | None = None

    @classmethod
    def from_record(cls, rec: Mapping) -> "LogRatioRecord":
        try:
            kl = rec.get("think_kl_estimate")
            return cls(
                trace_id=str(rec["trace_id"]),
                segment_logratios=tuple(float(x) for x in rec["segment_logratios"]),
                answer_logratio=float(rec["answer_logratio"]),
                think_kl_estimate=None if kl is None else float(kl),
            )
        except KeyError as exc:
            raise SchemaError(f"log-ratio record missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"malformed log-ratio record: {exc}") from None


@dataclass(frozen=True)
class WeightProfile:
    """One weight per boundary-augmented transition.

    ``weights[t]`` belongs to the transition entering segment ``t``; the last
    entry is the transition into the stop state.
    """

    trace_id: str
    polarity: Polarity
    weights: tuple[float, ...]
    clip: ClipBounds = ClipBounds()

    @classmethod
    def from_record(cls, rec: Mapping) -> "WeightProfile":
        try:
            clip = rec.get("clip") or {}
            return cls(
                trace_id=str(rec["trace_id"]),
                polarity=Polarity.parse(rec["polarity"]),
                weights=tuple(float(w) for w in rec["weights"]),
                clip=ClipBounds(float(clip.get("m", 0.2)), float(clip.get("M", 5.0))),
            )
        except KeyError as exc:
            raise SchemaError(f"weight record missing field {exc.args[0]!r}") from None


def segment_weight(
    y_prev: LabelSet,
    y_curr: LabelSet,
    P_signed: TransitionMatrix,
    P_global: TransitionMatrix,
    clip: ClipBounds = ClipBounds(),
) -> float:
    """Clipped ratio of a transition's probability under the polarity matrix to the pooled one."""
    if P_signed.values.shape != P_global.values.shape:
        raise ShapeError(f"matrix shapes differ: {P_signed.values.shape} vs {P_global.values.shape}")
    den = pairwise_prob(y_prev, y_curr, P_global)
    if den <= 0:
        warnings.warn(f"zero pooled probability for {y_prev!r}->{y_curr!r}; weight set to 1", DegenerateWeightWarning, stacklevel=2)
        return 1.0
    return clip.apply(pairwise_prob(y_prev, y_curr, P_signed) / den)


def weight_profile(trace: ReasoningTrace, matrices: MatrixSet, clip: ClipBounds = ClipBounds()) -> WeightProfile:
    if trace.polarity is None:
        raise MissingPolarity(f"trace {trace.id!r} has no polarity")
    signed = matrices.for_polarity(trace.polarity)
    states = to_state_sequence(trace)
    weights = tuple(
        segment_weight(prev, curr, signed, matrices.pooled, clip) for prev, curr in zip(states[:-1], states[1:])
    )
    return WeightProfile(trace.id, trace.polarity, weights, clip)


def implicit_reward(weights: "WeightProfile | Sequence[float]", logs: LogRatioRecord) -> float:
    """Weighted sum of segment log-ratios plus the answer log-ratio.

    The terminal (into-stop) weight covers no tokens and is ignored.
    """
    w = weights.weights if isinstance(weights, WeightProfile) else tuple(weights)
    T = len(logs.segment_logratios)
    if len(w) != T + 1:
        raise AlignmentError(f"{len(w)} weights for {T} segments of trace {logs.trace_id!r}; expected {T + 1}")
    total = 0.0
    for wt, lr in zip(w[:T], logs.segment_logratios):
        total += wt * lr
    return total + logs.answer_logratio


def unweighted_reward(logs: LogRatioRecord) -> float:
    return implicit_reward([1.0] * (len(logs.segment_logratios) + 1), logs)


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def subjective_value(reward: float, polarity: Polarity, params: KTOParams = KTOParams()) -> float:
    """Prospect-style value of a reward relative to the (non-negative) baseline."""
    z0 = max(params.z0, 0.0)
    if polarity is Polarity.POSITIVE:
        return params.lambda_c * _sigmoid(params.beta * (reward - z0))
    if polarity is Polarity.NEGATIVE:
        return params.lambda_r * _sigmoid(params.beta * (z0 - reward))
    raise MissingPolarity("subjective value needs a polarity")


def batch_loss(values: Sequence[float], params: KTOParams = KTOParams()) -> float:
    if not values:
        raise EmptyBatch("loss of an empty batch")
    return sum(params.lambda_y - v for v in values) / len(values)


def update_baseline(params: KTOParams, batch_kl_estimates: Sequence[float]) -> KTOParams:
    """Fold a batch's KL estimates into the moving-average baseline."""
    if not batch_kl_estimates:
        raise EmptyBatch("baseline update needs at least one KL estimate")
    mean = sum(batch_kl_estimates) / len(batch_kl_estimates)
    return replace(params, z0=params.z0_decay * params.z0 + (1.0 - params.z0_decay) * mean)
