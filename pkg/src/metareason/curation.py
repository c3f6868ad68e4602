"""Polarity labelling of candidate traces from ThinkOn/ThinkOff correctness draws."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .errors import MissingDraws, SchemaError
from .taxonomy import Polarity, ReasoningTrace, passes_length_filter


class _Discard:
    """Sentinel for draws that match neither polarity rule."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "DISCARD"

    def __bool__(self):
        return False


DISCARD = _Discard()


@dataclass(frozen=True)
class DrawRecord:
    draw_index: int
    z_on: int
    z_off: int

    def __post_init__(self):
        if self.z_on not in (0, 1) or self.z_off not in (0, 1):
            raise SchemaError(f"draw {self.draw_index}: correctness bits must be 0 or 1")
        if self.draw_index < 0:
            raise SchemaError("draw_index must be non-negative")

    @classmethod
    def from_record(cls, rec: Mapping) -> "DrawRecord":
        try:
            return cls(int(rec["draw_index"]), int(rec["z_on"]), int(rec["z_off"]))
        except KeyError as exc:
            raise SchemaError(f"draw record missing field {exc.args[0]!r}") from None


def classify_polarity(z_on: int, z_off: int) -> Polarity | _Discard:
    """(1, 0) -> positive, (0, 1) -> negative, anything else is discarded."""
    if (z_on, z_off) == (1, 0):
        return Polarity.POSITIVE
    if (z_on, z_off) == (0, 1):
        return Polarity.NEGATIVE
    return DISCARD


def intersect_draws(draws: Sequence[DrawRecord]) -> Polarity | _Discard:
    """Keep a polarity only if every independent draw agrees on it."""
    if not draws:
        raise MissingDraws("no draws to intersect")
    labels = {classify_polarity(d.z_on, d.z_off) for d in draws}
    if len(labels) == 1:
        return labels.pop()
    return DISCARD


_PUNCT_RE = re.compile(r"[^\w\s]")
_WS_RE = re.compile(r"\s+")


def question_key(text: str) -> str:
    return _WS_RE.sub(" ", _PUNCT_RE.sub("", text.lower())).strip()


def _count(records) -> dict[str, dict[str, int]]:
    stats: dict[str, Counter] = {}
    for trace, _ in records:
        pol = trace.polarity.value if trace.polarity is not None else "unlabeled"
        stats.setdefault(trace.source, Counter())[pol] += 1
    return {src: dict(sorted(c.items())) for src, c in sorted(stats.items())}


@dataclass(frozen=True)
class CandidatePool:
    records: tuple[tuple[ReasoningTrace, tuple[DrawRecord, ...]], ...]
    stats: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "stats", _count(self.records))

    def __len__(self):
        return len(self.records)

    @property
    def traces(self) -> list[ReasoningTrace]:
        return [t for t, _ in self.records]

    def totals(self) -> dict[str, int]:
        out = Counter()
        for by_pol in self.stats.values():
            out.update(by_pol)
        return dict(sorted(out.items()))


def dedupe(pool: CandidatePool) -> CandidatePool:
    """Drop later records whose normalised question was already seen."""
    seen = set()
    kept = []
    for trace, draws in pool.records:
        key = question_key(trace.question)
        if key in seen:
            continue
        seen.add(key)
        kept.append((trace, draws))
    return CandidatePool(tuple(kept))


@dataclass
class CurationReport:
    pool: CandidatePool
    discarded: int = 0
    duplicates: int = 0
    length_filtered: int = 0
    missing_draws: int = 0

    def summary(self) -> dict:
        return {
            "kept": len(self.pool),
            "discarded": self.discarded,
            "duplicates": self.duplicates,
            "length_filtered": self.length_filtered,
            "missing_draws": self.missing_draws,
            "totals": self.pool.totals(),
            "by_source": self.pool.stats,
        }


def curate(
    traces: Iterable[ReasoningTrace],
    draws_by_id: Mapping[str, Sequence[DrawRecord]],
    length_filter: bool = True,
) -> CurationReport:
    """Intersect draws into a polarity, deduplicate, then length-filter."""
    report = CurationReport(CandidatePool(()))
    labelled = []
    for trace in traces:
        draws = draws_by_id.get(trace.id)
        if not draws:
            report.missing_draws += 1
            continue
        pol = intersect_draws(draws)
        if pol is DISCARD:
            report.discarded += 1
            continue
        labelled.append((replace(trace, polarity=pol), tuple(draws)))
    pool = CandidatePool(tuple(labelled))
    unique = dedupe(pool)
    report.duplicates = len(pool) - len(unique)
    if length_filter:
        kept = tuple(r for r in unique.records if passes_length_filter(r[0]))
        report.length_filtered = len(unique) - len(kept)
        unique = CandidatePool(kept)
    report.pool = unique
    return report
