"""Exact-match flags over thinking and answer text, Acc/Mis, and F1@K."""

from __future__ import annotations

import re
import statistics
import string
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import EmptyBatch, InvalidK, MissingGold, SchemaError

_WS_RE = re.compile(r"\s+")


def normalize(text: str) -> str:
    """Lowercase, collapse whitespace, strip leading/trailing punctuation."""
    return _WS_RE.sub(" ", text.lower()).strip().strip(string.punctuation + " ")


@dataclass(frozen=True)
class EMFlags:
    em_t: int
    em_a: int

    @property
    def em_both(self) -> int:
        return int(self.em_t and self.em_a)

    def as_tuple(self) -> tuple[int, int, int]:
        return self.em_t, self.em_a, self.em_both


def em_flags(gold_answers: Sequence[str], think_text: str, answer_text: str, strict: bool = False) -> EMFlags:
    """Gold-in-thinking (substring) and gold-equals-answer flags.

    With ``strict=True`` the answer comparison uses the raw strings.
    """
    if not gold_answers:
        raise MissingGold("at least one gold answer is required")
    think = normalize(think_text)
    golds = [normalize(g) for g in gold_answers]
    em_t = any(g and g in think for g in golds)
    if strict:
        em_a = any(g == answer_text for g in gold_answers)
    else:
        answer = normalize(answer_text)
        em_a = any(g == answer for g in golds)
    return EMFlags(int(em_t), int(em_a))


def accuracy(flags: Sequence[EMFlags]) -> float:
    if not flags:
        raise EmptyBatch("accuracy of an empty set")
    return sum(f.em_both for f in flags) / len(flags)


def misleading(flags: Sequence[EMFlags]) -> float:
    """Share of records where exactly one of thinking/answer hits the gold."""
    if not flags:
        raise EmptyBatch("misleading rate of an empty set")
    return sum(f.em_t ^ f.em_a for f in flags) / len(flags)


def answer_only_accuracy(flags: Sequence[EMFlags]) -> float:
    # reported next to accuracy for comparison only
    if not flags:
        raise EmptyBatch("accuracy of an empty set")
    return sum(f.em_a for f in flags) / len(flags)


@dataclass(frozen=True)
class ClaimStats:
    supported: int
    total_claims: int
    k: int

    def __post_init__(self):
        if self.supported < 0 or self.total_claims < 0:
            raise SchemaError("claim counts must be non-negative")
        if self.supported > self.total_claims:
            raise SchemaError(f"supported ({self.supported}) exceeds total claims ({self.total_claims})")


def f1_at_k(stats: ClaimStats) -> float:
    if stats.k <= 0:
        raise InvalidK(f"K must be positive, got {stats.k}")
    S = stats.supported
    if S == 0:
        return 0.0
    precision = S / stats.total_claims
    recall = min(S / stats.k, 1.0)
    return 2 * precision * recall / (precision + recall)


def median_k(claim_counts: Iterable[int]) -> int:
    """K as the median claim count (rounded half up to an integer, at least 1)."""
    counts = list(claim_counts)
    if not counts:
        raise EmptyBatch("no claim counts to take a median of")
    return max(1, int(statistics.median(counts) + 0.5))


@dataclass
class MetricReport:
    n: int
    accuracy: float | None
    misleading: float | None
    answer_only_accuracy: float | None
    per_record: list[dict]
    f1_at_k: float | None = None
    mean_claims: float | None = None
    k: int | None = None

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "Acc": self.accuracy,
            "Mis": self.misleading,
            "answer_only_acc": self.answer_only_accuracy,
            "F1@K": self.f1_at_k,
            "#Claims": self.mean_claims,
            "K": self.k,
            "per_record": self.per_record,
        }


def evaluate(
    predictions: Sequence[Mapping],
    gold_by_id: Mapping[str, Sequence[str]],
    claims: Sequence[Mapping] = (),
    k: int | None = None,
    strict: bool = False,
) -> MetricReport:
    """Score prediction records ``{id, think_text, answer_text}`` against gold aliases."""
    flags, per_record = [], []
    for rec in predictions:
        rid = str(rec["id"])
        gold = gold_by_id.get(rid)
        if gold is None:
            raise MissingGold(f"no gold answers for prediction {rid!r}")
        f = em_flags(gold, rec.get("think_text", ""), rec.get("answer_text", ""), strict=strict)
        flags.append(f)
        per_record.append({"id": rid, "em_t": f.em_t, "em_a": f.em_a, "em_both": f.em_both})
    report = MetricReport(
        n=len(flags),
        accuracy=accuracy(flags) if flags else None,
        misleading=misleading(flags) if flags else None,
        answer_only_accuracy=answer_only_accuracy(flags) if flags else None,
        per_record=per_record,
    )
    if not flags and not claims:
        raise EmptyBatch("nothing to evaluate")
    if claims:
        stats = [(int(c["supported"]), int(c["total_claims"])) for c in claims]
        k = k if k is not None else median_k(t for _, t in stats)
        scores = [f1_at_k(ClaimStats(s, t, k)) for s, t in stats]
        report.f1_at_k = sum(scores) / len(scores)
        report.mean_claims = sum(t for _, t in stats) / len(stats)
        report.k = k
    return report
