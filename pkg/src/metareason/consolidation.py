"""Merge two annotators' per-step labels, escalating unresolved steps.

Annotation files follow the step schema the annotators are prompted with::

    {"index_base": 0,
     "steps": [{"step_number": 1,
                "thinking_step": [0],
                "meta_reasoning_strategies": ["decomposition"],
                "strategy_confidence_rating": [
                    {"strategy": "decomposition", "confidence_rating": 8.5}]}]}

Annotator A is the slot whose confidences win when both annotators agree.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence, Union

from .errors import AlignmentError, SchemaError, ValidationError
from .taxonomy import LabelSet, MetaLabel

ADMIT_THRESHOLD = 7.0
MAX_LABELS = 2


@dataclass(frozen=True)
class AnnotatedStep:
    step_number: int
    segment_indices: tuple[int, ...]
    strategies: tuple[MetaLabel, ...]
    confidences: tuple[float, ...]

    def __post_init__(self):
        strategies = tuple(MetaLabel.parse(s) for s in self.strategies)
        confidences = tuple(float(c) for c in self.confidences)
        indices = tuple(int(i) for i in self.segment_indices)
        object.__setattr__(self, "strategies", strategies)
        object.__setattr__(self, "confidences", confidences)
        object.__setattr__(self, "segment_indices", indices)
        if not 1 <= len(strategies) <= MAX_LABELS:
            raise SchemaError(f"step {self.step_number}: expected 1-2 strategies, got {len(strategies)}")
        if len(set(strategies)) != len(strategies):
            raise SchemaError(f"step {self.step_number}: duplicate strategies")
        if len(confidences) != len(strategies):
            raise SchemaError(f"step {self.step_number}: one confidence per strategy required")
        if any(not 0.0 <= c <= 10.0 for c in confidences):
            raise SchemaError(f"step {self.step_number}: confidences must lie in [0, 10]")
        if not indices or list(indices) != sorted(set(indices)) or indices[0] < 0:
            raise SchemaError(f"step {self.step_number}: segment indices must be ascending and non-negative")

    def confidence_of(self) -> dict[MetaLabel, float]:
        return dict(zip(self.strategies, self.confidences))

    @classmethod
    def from_record(cls, step: Mapping, index_base: int = 0) -> "AnnotatedStep":
        try:
            strategies = list(step["meta_reasoning_strategies"])
            ratings = {
                MetaLabel.parse(r["strategy"]): float(r["confidence_rating"])
                for r in step.get("strategy_confidence_rating", [])
            }
            parsed = [MetaLabel.parse(s) for s in strategies]
            missing = [s.value for s in parsed if s not in ratings]
            if missing:
                raise SchemaError(f"step {step.get('step_number')}: no confidence for {missing}")
            return cls(
                step_number=int(step["step_number"]),
                segment_indices=tuple(int(i) - index_base for i in step["thinking_step"]),
                strategies=tuple(parsed),
                confidences=tuple(ratings[s] for s in parsed),
            )
        except ValidationError:
            raise
        except KeyError as exc:
            raise SchemaError(f"annotation step missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"malformed annotation step: {exc}") from None

    def to_record(self) -> dict:
        return {
            "step_number": self.step_number,
            "thinking_step": list(self.segment_indices),
            "meta_reasoning_strategies": [s.value for s in self.strategies],
            "strategy_confidence_rating": [
                {"strategy": s.value, "confidence_rating": c} for s, c in zip(self.strategies, self.confidences)
            ],
        }


def parse_annotation(doc: Mapping) -> list[AnnotatedStep]:
    """Read one annotator's output for a trace into 0-based steps."""
    if "steps" not in doc:
        raise SchemaError("annotation document has no 'steps'")
    base = int(doc.get("index_base", 0))
    steps = [AnnotatedStep.from_record(s, base) for s in doc["steps"]]
    return sorted(steps, key=lambda s: s.step_number)


@dataclass(frozen=True)
class Accepted:
    step_number: int
    segment_indices: tuple[int, ...]
    labels: tuple[MetaLabel, ...]
    confidences: tuple[float, ...]
    rule: str

    @property
    def label_set(self) -> LabelSet:
        return LabelSet.of(*self.labels)

    def to_record(self) -> dict:
        return {
            "step_number": self.step_number,
            "segment_indices": list(self.segment_indices),
            "status": "accepted",
            "rule": self.rule,
            "labels": [m.value for m in self.labels],
            "confidences": list(self.confidences),
        }


@dataclass(frozen=True)
class Escalated:
    step_number: int
    segment_indices: tuple[int, ...]
    reason: str

    def to_record(self) -> dict:
        return {
            "step_number": self.step_number,
            "segment_indices": list(self.segment_indices),
            "status": "escalated",
            "reason": self.reason,
        }


ConsolidationOutcome = Union[Accepted, Escalated]


def _taxonomy_order(conf: Mapping[MetaLabel, float]) -> tuple[tuple[MetaLabel, ...], tuple[float, ...]]:
    labels = sorted(conf, key=lambda m: m.state)
    return tuple(labels), tuple(conf[m] for m in labels)


def consolidate_segment(a: AnnotatedStep, b: AnnotatedStep) -> ConsolidationOutcome:
    """Combine two annotators' labels for one step.

    Identical label sets keep annotator A's confidences. Otherwise shared
    labels are kept at the higher confidence and topped up with
    single-annotator labels whose confidence exceeds 7, best first, until two
    labels are held. A step left with no label is escalated.
    """
    if a.segment_indices != b.segment_indices:
        raise AlignmentError(
            f"step {a.step_number}: segments {a.segment_indices} vs {b.segment_indices}"
        )
    ca, cb = a.confidence_of(), b.confidence_of()
    if set(ca) == set(cb):
        labels, confs = _taxonomy_order(ca)
        return Accepted(a.step_number, a.segment_indices, labels, confs, rule="consistent")

    kept = {m: max(ca[m], cb[m]) for m in ca.keys() & cb.keys()}
    solo = {m: c for m, c in {**ca, **cb}.items() if m not in kept}
    # ties resolved by taxonomy order
    for m in sorted(solo, key=lambda m: (-solo[m], m.state)):
        if len(kept) >= MAX_LABELS:
            break
        if solo[m] > ADMIT_THRESHOLD:
            kept[m] = solo[m]
    if not kept:
        return Escalated(a.step_number, a.segment_indices, reason="no shared label and no single-annotator label above 7")
    labels, confs = _taxonomy_order(kept)
    return Accepted(a.step_number, a.segment_indices, labels, confs, rule="partial_overlap")


def apply_adjudication(escalated: Escalated, adjudicator: "AnnotatedStep | Mapping") -> Accepted:
    """Take the adjudicator's labels and confidences as final."""
    if not isinstance(adjudicator, AnnotatedStep):
        adjudicator = AnnotatedStep.from_record(adjudicator)
    if adjudicator.segment_indices != escalated.segment_indices:
        raise AlignmentError(
            f"adjudication for step {escalated.step_number} covers {adjudicator.segment_indices}, "
            f"expected {escalated.segment_indices}"
        )
    return Accepted(
        escalated.step_number,
        escalated.segment_indices,
        adjudicator.strategies,
        adjudicator.confidences,
        rule="adjudicated",
    )


def consolidate_trace(
    a: Sequence[AnnotatedStep], b: Sequence[AnnotatedStep]
) -> tuple[list[ConsolidationOutcome], int]:
    a = sorted(a, key=lambda s: s.step_number)
    b = sorted(b, key=lambda s: s.step_number)
    if [s.segment_indices for s in a] != [s.segment_indices for s in b]:
        raise AlignmentError("annotators partition the segments differently")
    outcomes = [consolidate_segment(x, y) for x, y in zip(a, b)]
    escalations = sum(isinstance(o, Escalated) for o in outcomes)
    return outcomes, escalations


def segment_labels(outcomes: Sequence[ConsolidationOutcome], num_segments: int) -> list[LabelSet] | None:
    """Per-segment label sets, or None while any step awaits adjudication.

    A step that covers several segments assigns its labels to each of them.
    """
    if any(isinstance(o, Escalated) for o in outcomes):
        return None
    labels: list[LabelSet | None] = [None] * num_segments
    for o in outcomes:
        for i in o.segment_indices:
            if i >= num_segments or labels[i] is not None:
                raise AlignmentError(f"segment {i} is out of range or labelled twice")
            labels[i] = o.label_set
    if any(ls is None for ls in labels):
        missing = [i for i, ls in enumerate(labels) if ls is None]
        raise AlignmentError(f"segments {missing} have no annotation step")
    return labels
