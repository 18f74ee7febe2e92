"""Core record types for the distillation dataset, plus JSON-lines IO.

One :class:`DistillRecord` is one source sentence together with the
(label, span) pairs an LLM extracted from it.  Records serialize one per
line as::

    {"id", "text", "tokens", "pairs": [{"label", "span", "start", "end"}],
     "raw_response"}

``start``/``end`` are token indices, end exclusive.  Records that failed
annotation carry an extra ``"error"`` field.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .text import detokenize, tokenize


class DataError(ValueError):
    """Raised for malformed dataset files."""


@dataclass(frozen=True)
class SourceSentence:
    """A single sentence drawn from a raw corpus."""

    id: str
    text: str
    tokens: tuple[str, ...]
    origin: str = ""

    def __post_init__(self) -> None:
        if not self.tokens:
            raise ValueError(f"sentence {self.id!r} has no tokens")

    @classmethod
    def from_text(cls, id: str, text: str, origin: str = "") -> "SourceSentence":
        return cls(id=id, text=text, tokens=tuple(tokenize(text)), origin=origin)

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class LabelSpanPair:
    """One (IE label, extracted span) annotation.

    ``token_range`` is a half-open [start, end) pair into the source
    sentence's tokens; it is None until the span has been aligned.
    """

    label: str
    span_text: str
    token_range: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        if self.token_range is not None:
            i, j = self.token_range
            if not 0 <= i < j:
                raise ValueError(f"invalid token range [{i}, {j})")


def normalize_label(label: str) -> str:
    """Trim and collapse internal whitespace."""
    return " ".join(label.split())


@dataclass(frozen=True)
class DistillRecord:
    """A sentence plus its aligned (label, span) pairs."""

    sentence: SourceSentence
    pairs: tuple[LabelSpanPair, ...] = ()
    raw_response: str = ""
    error: str | None = None

    def __post_init__(self) -> None:
        seen: set[tuple[str, tuple[int, int] | None]] = set()
        for pair in self.pairs:
            key = (pair.label, pair.token_range)
            if key in seen:
                raise ValueError(f"duplicate pair {key} in record {self.sentence.id!r}")
            seen.add(key)
            if pair.token_range is not None:
                j = pair.token_range[1]
                if j > len(self.sentence):
                    raise ValueError(
                        f"token range {pair.token_range} exceeds sentence "
                        f"length {len(self.sentence)}"
                    )


def record_to_dict(record: DistillRecord) -> dict:
    doc = {
        "id": record.sentence.id,
        "text": record.sentence.text,
        "tokens": list(record.sentence.tokens),
        "pairs": [
            {
                "label": p.label,
                "span": p.span_text,
                "start": p.token_range[0] if p.token_range else None,
                "end": p.token_range[1] if p.token_range else None,
            }
            for p in record.pairs
        ],
        "raw_response": record.raw_response,
    }
    if record.error is not None:
        doc["error"] = record.error
    return doc


def record_from_dict(doc: dict, origin: str = "") -> DistillRecord:
    sentence = SourceSentence(
        id=str(doc["id"]),
        text=doc["text"],
        tokens=tuple(doc["tokens"]),
        origin=origin,
    )
    pairs = []
    for p in doc.get("pairs", []):
        rng = None
        if p.get("start") is not None and p.get("end") is not None:
            rng = (int(p["start"]), int(p["end"]))
        pairs.append(LabelSpanPair(label=p["label"], span_text=p["span"], token_range=rng))
    return DistillRecord(
        sentence=sentence,
        pairs=tuple(pairs),
        raw_response=doc.get("raw_response", ""),
        error=doc.get("error"),
    )


def write_records(path: str | Path, records: Iterable[DistillRecord]) -> int:
    """Write records as JSON-lines. Returns the number written."""
    path = Path(path)
    n = 0
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_dict(record), ensure_ascii=False) + "\n")
            n += 1
    return n


def read_records(
    path: str | Path,
    bad_lines: list[int] | None = None,
) -> Iterator[DistillRecord]:
    """Yield records from a JSON-lines file.

    Malformed lines raise :class:`DataError` with the line number, unless
    ``bad_lines`` is given, in which case their line numbers are collected
    there and the lines skipped.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield record_from_dict(json.loads(line), origin=path.name)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                if bad_lines is None:
                    raise DataError(f"{path}:{lineno}: malformed record: {exc}") from exc
                bad_lines.append(lineno)


def pair_matches_sentence(sentence: SourceSentence, pair: LabelSpanPair) -> bool:
    """True if the pair's token range detokenizes to its span text.

    Comparison is on tokenize-normalized surfaces, case-sensitive.
    """
    if pair.token_range is None:
        return False
    i, j = pair.token_range
    if j > len(sentence):
        return False
    return detokenize(sentence.tokens[i:j]) == detokenize(tuple(tokenize(pair.span_text)))
