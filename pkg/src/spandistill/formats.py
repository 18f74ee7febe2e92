"""Converters from distillation records and tagged examples to training formats.

* :func:`distill_to_training` turns aligned records into prefix+BIO
  examples (one per record/label, plus sampled all-O negatives).
* :func:`convert_seq2seq` / :func:`convert_causal` re-express a tagged
  example for encoder-decoder and decoder-only training; both have exact
  inverse parsers so generated outputs can be evaluated.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Sequence

from .codec import TaggedExample, align_tags, decode_spans, encode_query
from .records import DistillRecord

SPAN_JOINER = "; "
EMPTY_TARGET = "NONE"
END_OF_TEXT = "<|endoftext|>"


def _non_overlapping(ranges: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Earliest-start greedy selection; BIO cannot express overlaps."""
    kept: list[tuple[int, int]] = []
    for start, end in sorted(ranges):
        if not kept or start >= kept[-1][1]:
            kept.append((start, end))
    return kept


def distill_to_training(
    records: Sequence[DistillRecord],
    negatives_per_record: int = 1,
    seed: int = 0,
) -> list[TaggedExample]:
    """Build prefix+BIO training examples from aligned records.

    One positive example per (record, distinct label) carrying all that
    label's spans, plus ``negatives_per_record`` all-O examples per record
    whose labels are drawn from other records' label pool.  Deterministic
    per seed.
    """
    label_pool = sorted({p.label for r in records for p in r.pairs})
    rng = random.Random(seed)
    examples: list[TaggedExample] = []
    for record in records:
        by_label: dict[str, list[tuple[int, int]]] = {}
        for pair in record.pairs:
            if pair.token_range is None:
                continue
            by_label.setdefault(pair.label, []).append(pair.token_range)
        for label, ranges in by_label.items():
            skeleton = encode_query(label, record.sentence)
            examples.append(align_tags(skeleton, _non_overlapping(ranges)))
        candidates = [l for l in label_pool if l not in by_label]
        if negatives_per_record and candidates:
            chosen = rng.sample(candidates, min(negatives_per_record, len(candidates)))
            for label in chosen:
                examples.append(align_tags(encode_query(label, record.sentence), []))
    return examples


def convert_seq2seq(example: TaggedExample) -> tuple[str, str]:
    """(input, target) strings for encoder-decoder training.

    Input is the label prefix plus the space-joined body; the target joins
    extracted span texts with "; " in sentence order, or "NONE" when the
    example has no spans.
    """
    if example.tags is None:
        raise ValueError("example has no tags")
    source = f"{example.label}: " + " ".join(example.body_tokens)
    spans = decode_spans(example.tags)
    if not spans:
        return source, EMPTY_TARGET
    target = SPAN_JOINER.join(
        " ".join(example.body_tokens[i:j]) for i, j in spans
    )
    return source, target


def parse_seq2seq(source: str, target: str) -> tuple[str, list[str]]:
    """Inverse of :func:`convert_seq2seq`: recover (label, span texts).

    Exact provided no span contains the "; " joiner and the label contains
    no ": ".
    """
    label, sep, _ = source.partition(": ")
    if not sep:
        raise ValueError(f"no label prefix in {source!r}")
    if target == EMPTY_TARGET:
        return label, []
    return label, target.split(SPAN_JOINER)


@dataclass(frozen=True)
class CausalExample:
    """A decoder-only training string with its loss-mask boundaries.

    Only ``text[target_start:target_end]`` (the answer segment) should
    contribute to the loss.
    """

    text: str
    target_start: int
    target_end: int

    @property
    def target(self) -> str:
        return self.text[self.target_start : self.target_end]


def convert_causal(example: TaggedExample) -> CausalExample:
    """Single training string: body, newline, "label:", space, answer, EOT."""
    _, target = convert_seq2seq(example)
    body = " ".join(example.body_tokens)
    head = f"{body}\n{example.label}: "
    return CausalExample(
        text=head + target + END_OF_TEXT,
        target_start=len(head),
        target_end=len(head) + len(target),
    )


def parse_causal(text: str) -> tuple[str, list[str]]:
    """Inverse of :func:`convert_causal` on the emitted string."""
    if text.endswith(END_OF_TEXT):
        text = text[: -len(END_OF_TEXT)]
    _, sep, answer_line = text.rpartition("\n")
    if not sep:
        raise ValueError("no answer line")
    label, sep, target = answer_line.partition(": ")
    if not sep:
        raise ValueError(f"no label in answer line {answer_line!r}")
    if target == EMPTY_TARGET:
        return label, []
    return label, target.split(SPAN_JOINER)
