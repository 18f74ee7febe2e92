"""Prefix+BIO codec: between (label, sentence, spans) and tagged sequences.

A query label is attached to the input as a tokenized prefix ("Person :"),
the sentence body is tagged B/I/O, and model tag distributions decode back
into scored spans.  When several labels claim overlapping spans the
conflict is resolved greedily by span confidence.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .records import DataError, SourceSentence
from .text import tokenize

TAGS = ("B", "I", "O")
_TAG_INDEX = {t: i for i, t in enumerate(TAGS)}

PROB_FLOOR = 1e-12
ROW_SUM_TOL = 1e-6


@dataclass(frozen=True)
class TaggedExample:
    """A label-prefixed token sequence with per-body-token BIO tags.

    ``tags`` is None for query skeletons that have not been tagged yet.
    Prefix tokens carry no tags; they are a query, not content.
    """

    label: str
    prefix_tokens: tuple[str, ...]
    body_tokens: tuple[str, ...]
    tags: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.tags is not None:
            if len(self.tags) != len(self.body_tokens):
                raise ValueError(
                    f"{len(self.tags)} tags for {len(self.body_tokens)} body tokens"
                )
            bad = set(self.tags) - set(TAGS)
            if bad:
                raise ValueError(f"unknown tags: {sorted(bad)}")


@dataclass(frozen=True, eq=False)
class TagDistribution:
    """Per-body-token probability triples over (B, I, O)."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.probs, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != len(TAGS):
            raise ValueError(f"expected shape (n, 3), got {arr.shape}")
        if np.any(arr < 0) or np.any(arr > 1 + ROW_SUM_TOL):
            raise ValueError("probabilities outside [0, 1]")
        if len(arr) and np.max(np.abs(arr.sum(axis=1) - 1.0)) > ROW_SUM_TOL:
            raise ValueError("token distributions do not sum to 1")
        object.__setattr__(self, "probs", arr)

    def __len__(self) -> int:
        return len(self.probs)

    def prob(self, index: int, tag: str) -> float:
        return float(self.probs[index, _TAG_INDEX[tag]])

    def argmax_tags(self) -> list[str]:
        return [TAGS[i] for i in self.probs.argmax(axis=1)]

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> "TagDistribution":
        return cls(np.asarray(rows, dtype=float))

    @classmethod
    def from_tags(cls, tags: Sequence[str], confidence: float = 0.98) -> "TagDistribution":
        """Near-one-hot distribution putting ``confidence`` on each tag."""
        rest = (1.0 - confidence) / (len(TAGS) - 1)
        arr = np.full((len(tags), len(TAGS)), rest)
        for pos, tag in enumerate(tags):
            arr[pos, _TAG_INDEX[tag]] = confidence
        return cls(arr)


@dataclass(frozen=True)
class ScoredSpan:
    """A decoded span with its confidence score (higher = more confident)."""

    label: str
    start: int
    end: int
    score: float

    def __post_init__(self) -> None:
        if not self.start < self.end:
            raise ValueError(f"empty span [{self.start}, {self.end})")
        if not math.isfinite(self.score):
            raise ValueError("span score must be finite")

    @property
    def token_range(self) -> tuple[int, int]:
        return (self.start, self.end)

    def overlaps(self, other: "ScoredSpan") -> bool:
        return self.start < other.end and other.start < self.end


def encode_query(label: str, sentence: SourceSentence) -> TaggedExample:
    """Build the untagged query skeleton for (label, sentence).

    The prefix is the tokenized label followed by ":".
    """
    label = label.strip()
    if not label:
        raise ValueError("query label must be non-empty")
    prefix = tuple(tokenize(label)) + (":",)
    return TaggedExample(label=label, prefix_tokens=prefix, body_tokens=sentence.tokens)


def align_tags(
    skeleton: TaggedExample, spans: Sequence[tuple[int, int]]
) -> TaggedExample:
    """Tag the skeleton's body: B at each span start, I inside, O elsewhere.

    Spans must be sorted, pairwise non-overlapping and within the body.
    """
    n = len(skeleton.body_tokens)
    tags = ["O"] * n
    prev_end = 0
    for start, end in spans:
        if not 0 <= start < end <= n:
            raise ValueError(f"span [{start}, {end}) outside body of length {n}")
        if start < prev_end:
            raise ValueError(f"span [{start}, {end}) overlaps a previous span")
        tags[start] = "B"
        for pos in range(start + 1, end):
            tags[pos] = "I"
        prev_end = end
    return replace(skeleton, tags=tuple(tags))


def decode_spans(tags: Sequence[str]) -> list[tuple[int, int]]:
    """Decode BIO tags into half-open token ranges.

    Maximal B(I)* runs become spans.  A stray I (at position 0 or after an
    O) is repaired to B rather than dropped.
    """
    spans: list[tuple[int, int]] = []
    start: int | None = None
    for pos, tag in enumerate(tags):
        if tag not in _TAG_INDEX:
            raise ValueError(f"unknown tag {tag!r} at position {pos}")
        if tag == "B":
            if start is not None:
                spans.append((start, pos))
            start = pos
        elif tag == "I":
            if start is None:
                start = pos  # stray I: treat as B
        else:
            if start is not None:
                spans.append((start, pos))
                start = None
    if start is not None:
        spans.append((start, len(tags)))
    return spans


def bi_sequence_score(dist: TagDistribution, span: tuple[int, int]) -> float:
    """Mean log-probability of the B(I)* tag assignment over the span.

    The mean (rather than the raw product) keeps scores comparable
    between spans of different lengths.
    """
    start, end = span
    if not 0 <= start < end <= len(dist):
        raise ValueError(f"span [{start}, {end}) outside distribution of length {len(dist)}")
    total = 0.0
    for pos in range(start, end):
        tag = "B" if pos == start else "I"
        total += math.log(max(dist.prob(pos, tag), PROB_FLOOR))
    return total / (end - start)


def _priority(span: ScoredSpan) -> tuple:
    # Higher score first; ties: earlier start, shorter span, label order.
    return (-span.score, span.start, span.end - span.start, span.label)


def resolve_conflicts(candidates: Iterable[ScoredSpan]) -> list[ScoredSpan]:
    """Greedy non-overlapping selection by descending span score.

    A candidate is kept iff it overlaps no already-kept candidate.  Ties
    break by earlier start, then shorter span, then label, so output is
    identical across runs and platforms.
    """
    kept: list[ScoredSpan] = []
    for candidate in sorted(candidates, key=_priority):
        if all(not candidate.overlaps(k) for k in kept):
            kept.append(candidate)
    return kept


def decode_with_probs(dist: TagDistribution, label: str) -> list[ScoredSpan]:
    """Argmax-decode a tag distribution into scored spans, sorted by start."""
    spans = decode_spans(dist.argmax_tags())
    return [
        ScoredSpan(label=label, start=i, end=j, score=bi_sequence_score(dist, (i, j)))
        for i, j in spans
    ]


def is_valid_bio(tags: Sequence[str]) -> bool:
    """True if every I is (transitively) preceded by a B."""
    prev = "O"
    for tag in tags:
        if tag not in _TAG_INDEX:
            return False
        if tag == "I" and prev == "O":
            return False
        prev = tag
    return True


def write_tagged(path: str | Path, examples: Iterable[TaggedExample]) -> int:
    """Write tagged examples as JSON-lines {"label", "tokens", "tags"}."""
    path = Path(path)
    n = 0
    with path.open("w", encoding="utf-8") as fh:
        for example in examples:
            if example.tags is None:
                raise ValueError("cannot serialize an untagged example")
            doc = {
                "label": example.label,
                "tokens": list(example.body_tokens),
                "tags": list(example.tags),
            }
            fh.write(json.dumps(doc, ensure_ascii=False) + "\n")
            n += 1
    return n


def read_tagged(path: str | Path) -> Iterator[TaggedExample]:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                label = doc["label"]
                yield TaggedExample(
                    label=label,
                    prefix_tokens=tuple(tokenize(label)) + (":",),
                    body_tokens=tuple(doc["tokens"]),
                    tags=tuple(doc["tags"]),
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: malformed tagged example: {exc}") from exc
