"""Meta-reasoning label taxonomy, trace data model and state sequences.

The state space has 17 entries: a start boundary at index 0, the 15
meta-reasoning labels at indices 1..15 (fixed order below) and a stop
boundary at index 16. Matrices written by this package always use this
ordering.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Mapping, Sequence

from .errors import (
    EmptyTrace,
    MalformedSequence,
    SchemaError,
    UnannotatedTrace,
    ValidationError,
)


class MetaLabel(str, Enum):
    # meta-cognitive regulation
    FRAMING = "framing"
    BACKTRACKING = "backtracking"
    SELF_VERIFICATION = "self_verification"
    EVALUATION = "evaluation"
    # problem-solving operations
    DECOMPOSITION = "decomposition"
    CHAINING = "chaining"
    # knowledge operations
    CAUSAL_REASONING = "causal_reasoning"
    RETRIEVAL = "retrieval"
    ANALOGY = "analogy"
    SYNTHESIS = "synthesis"
    COMPARISON = "comparison"
    CATEGORIZATION = "categorization"
    CASE_ANALYSIS = "case_analysis"
    # explanatory & communication
    EXPLANATION = "explanation"
    SUMMARIZATION = "summarization"

    @property
    def state(self) -> int:
        return _LABEL_TO_STATE[self]

    @classmethod
    def parse(cls, name: "str | MetaLabel") -> "MetaLabel":
        if isinstance(name, MetaLabel):
            return name
        try:
            return cls(str(name).strip().lower().replace("-", "_"))
        except ValueError:
            raise SchemaError(f"unknown meta-reasoning label: {name!r}") from None


LABELS: tuple[MetaLabel, ...] = tuple(MetaLabel)
START = 0
STOP = len(LABELS) + 1
NUM_STATES = len(LABELS) + 2
START_NAME = "<start>"
STOP_NAME = "<stop>"
STATE_NAMES: tuple[str, ...] = (START_NAME, *(m.value for m in LABELS), STOP_NAME)

_LABEL_TO_STATE = {m: i + 1 for i, m in enumerate(LABELS)}


def state_of(name: "str | MetaLabel") -> int:
    """Map a label or boundary name to its state index."""
    if name == START_NAME:
        return START
    if name == STOP_NAME:
        return STOP
    return MetaLabel.parse(name).state


def label_of(state: int) -> MetaLabel:
    if not 1 <= state <= len(LABELS):
        raise SchemaError(f"state {state} is not a meta-reasoning label")
    return LABELS[state - 1]


class Polarity(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"

    @classmethod
    def parse(cls, value) -> "Polarity | None":
        if value is None or isinstance(value, Polarity):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise SchemaError(f"unknown polarity: {value!r}") from None


@dataclass(frozen=True)
class LabelSet:
    """An unordered set of one or two labels, or a boundary singleton."""

    states: tuple[int, ...]

    def __post_init__(self):
        states = tuple(sorted(self.states))
        if len(set(states)) != len(states):
            raise SchemaError(f"duplicate labels in set: {states}")
        if not states or any(not 0 <= s < NUM_STATES for s in states):
            raise SchemaError(f"invalid state indices: {states}")
        boundary = [s for s in states if s in (START, STOP)]
        if boundary and len(states) != 1:
            raise SchemaError("boundary states must appear as singletons")
        if len(states) > 2:
            raise SchemaError(f"a segment carries at most two labels, got {len(states)}")
        object.__setattr__(self, "states", states)

    @classmethod
    def of(cls, *labels: "str | MetaLabel") -> "LabelSet":
        return cls(tuple(state_of(x) for x in labels))

    @classmethod
    def start(cls) -> "LabelSet":
        return cls((START,))

    @classmethod
    def stop(cls) -> "LabelSet":
        return cls((STOP,))

    @property
    def is_start(self) -> bool:
        return self.states == (START,)

    @property
    def is_stop(self) -> bool:
        return self.states == (STOP,)

    def names(self) -> list[str]:
        return [STATE_NAMES[s] for s in self.states]

    def __iter__(self):
        return iter(self.states)

    def __len__(self) -> int:
        return len(self.states)

    def __repr__(self) -> str:
        return "{" + ",".join(self.names()) + "}"


@dataclass(frozen=True)
class TransitionObservation:
    source: LabelSet
    target: LabelSet

    def __post_init__(self):
        if self.source.is_stop:
            raise MalformedSequence("a transition cannot leave the stop state")
        if self.target.is_start:
            raise MalformedSequence("a transition cannot enter the start state")

    def index_pair(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        return self.source.states, self.target.states


TokenCounter = Callable[[str], int]


def whitespace_token_count(text: str) -> int:
    return len(text.split())


@dataclass(frozen=True)
class Segment:
    index: int
    text: str
    token_count: int


SEGMENT_DELIMITER = "\n\n"


def split_segments(raw_think_text: str, counter: TokenCounter = whitespace_token_count) -> list[Segment]:
    """Split the text between the think markers into segments.

    Pieces are separated by a blank line, stripped, and dropped if empty.
    """
    pieces = [p.strip() for p in raw_think_text.split(SEGMENT_DELIMITER)]
    pieces = [p for p in pieces if p]
    if not pieces:
        raise EmptyTrace("no non-empty segments in thinking text")
    return [Segment(i, p, counter(p)) for i, p in enumerate(pieces)]


@dataclass(frozen=True)
class ReasoningTrace:
    id: str
    question: str
    gold_answers: tuple[str, ...]
    segments: tuple[Segment, ...]
    answer_text: str = ""
    labels: tuple[LabelSet, ...] | None = None
    polarity: Polarity | None = None
    source: str = "unknown"

    def __post_init__(self):
        if not self.gold_answers:
            raise SchemaError(f"trace {self.id!r} has no gold answers")
        if [s.index for s in self.segments] != list(range(len(self.segments))):
            raise SchemaError(f"trace {self.id!r} segment indices are not contiguous from 0")
        if self.labels is not None and len(self.labels) != len(self.segments):
            raise SchemaError(
                f"trace {self.id!r} has {len(self.labels)} label sets for {len(self.segments)} segments"
            )
        if self.labels is not None and any(ls.is_start or ls.is_stop for ls in self.labels):
            raise SchemaError(f"trace {self.id!r} labels a segment with a boundary state")

    @property
    def think_text(self) -> str:
        return SEGMENT_DELIMITER.join(s.text for s in self.segments)

    @property
    def think_tokens(self) -> int:
        return sum(s.token_count for s in self.segments)

    @classmethod
    def from_record(cls, rec: Mapping, counter: TokenCounter = whitespace_token_count) -> "ReasoningTrace":
        try:
            if rec.get("segments") is not None:
                segments = tuple(
                    Segment(int(s["index"]), str(s["text"]),
                            int(s["token_count"]) if s.get("token_count") is not None else counter(s["text"]))
                    for s in rec["segments"]
                )
            elif rec.get("think_text") is not None:
                segments = tuple(split_segments(rec["think_text"], counter))
            else:
                raise SchemaError("trace needs 'segments' or 'think_text'")
            labels = rec.get("labels")
            if labels is not None:
                labels = tuple(LabelSet.of(*names) for names in labels)
            gold = rec["gold_answers"]
            if isinstance(gold, str):
                gold = [gold]
            return cls(
                id=str(rec["id"]),
                question=str(rec.get("question", "")),
                gold_answers=tuple(str(g) for g in gold),
                segments=segments,
                answer_text=str(rec.get("answer_text", "")),
                labels=labels,
                polarity=Polarity.parse(rec.get("polarity")),
                source=str(rec.get("source") or "unknown"),
            )
        except ValidationError:
            raise
        except KeyError as exc:
            raise SchemaError(f"trace record missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"malformed trace record: {exc}") from None

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "question": self.question,
            "gold_answers": list(self.gold_answers),
            "segments": [
                {"index": s.index, "text": s.text, "token_count": s.token_count} for s in self.segments
            ],
            "answer_text": self.answer_text,
            "labels": None if self.labels is None else [ls.names() for ls in self.labels],
            "polarity": None if self.polarity is None else self.polarity.value,
            "source": self.source,
        }


MIN_SEGMENTS, MAX_SEGMENTS = 4, 15
MIN_THINK_TOKENS, MAX_THINK_TOKENS = 450, 1000


def passes_length_filter(trace: ReasoningTrace) -> bool:
    """Keep traces with 4 < segments < 15 and 450 < thinking tokens < 1000."""
    n = len(trace.segments)
    tokens = trace.think_tokens
    return MIN_SEGMENTS < n < MAX_SEGMENTS and MIN_THINK_TOKENS < tokens < MAX_THINK_TOKENS


def to_state_sequence(trace: ReasoningTrace) -> list[LabelSet]:
    if trace.labels is None:
        raise UnannotatedTrace(f"trace {trace.id!r} has no labels")
    return [LabelSet.start(), *trace.labels, LabelSet.stop()]


def transitions_of(states: Sequence[LabelSet]) -> list[TransitionObservation]:
    if len(states) < 2:
        raise MalformedSequence(f"need at least 2 states, got {len(states)}")
    return [TransitionObservation(a, b) for a, b in zip(states[:-1], states[1:])]


def observations_of(traces: Iterable[ReasoningTrace]) -> list[TransitionObservation]:
    """Flatten labeled traces into boundary-augmented transition observations."""
    out: list[TransitionObservation] = []
    for trace in traces:
        out.extend(transitions_of(to_state_sequence(trace)))
    return out

