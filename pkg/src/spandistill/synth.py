"""Distillation dataset synthesis.

Samples first-sentences from a raw corpus, prompts an LLM to extract
"important information" as "- Label: Span" lines, parses and aligns the
answers, and emits :class:`~spandistill.records.DistillRecord` objects plus
corpus-level label statistics.
"""

from __future__ import annotations

import random
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Iterable, Sequence

from .llm import LLMClient, PermanentLLMError, RetryPolicy, complete_with_retry
from .records import DistillRecord, LabelSpanPair, SourceSentence, normalize_label
from .text import first_sentence, tokenize

PROMPT_VERSION = "important-information/v1"

# Line format mandated by the prompt: dash, label text, colon, span text.
_PAIR_LINE_RE = re.compile(r"^\s*-\s*([^:]+?)\s*:\s*(.*\S)\s*$")

# Fixed conjunction delimiters used to split multi-span answers.
CONJUNCTION_DELIMITERS = (", ", "; ", " and ", " or ")
_CONJUNCTION_RE = re.compile("|".join(re.escape(d) for d in CONJUNCTION_DELIMITERS))


def load_prompt_template() -> str:
    return (
        resources.files("spandistill.assets").joinpath("prompt_v1.txt").read_text("utf-8")
    )


def build_prompt(sentence: SourceSentence) -> str:
    """Instruction asking for all important information in the sentence.

    Deterministic; the sentence is embedded verbatim, never escaped.
    """
    if not sentence.text.strip():
        raise ValueError("cannot prompt for an empty sentence")
    return load_prompt_template().replace("{sentence}", sentence.text)


@dataclass
class CorpusSample:
    sentences: list[SourceSentence]
    exhausted: bool = False


def sample_sentences(
    corpus_stream: Iterable[str], n: int, corpus_name: str = "corpus"
) -> CorpusSample:
    """Take the first sentence of up to ``n`` distinct paragraphs.

    Sentences are deduplicated by exact text.  If the corpus runs out
    before ``n``, the result carries ``exhausted=True`` rather than
    raising.
    """
    sentences: list[SourceSentence] = []
    seen: set[str] = set()
    exhausted = True
    for index, paragraph in enumerate(corpus_stream):
        if len(sentences) >= n:
            exhausted = False
            break
        text = first_sentence(paragraph)
        if not text or text in seen:
            continue
        tokens = tuple(tokenize(text))
        if not tokens:
            continue
        seen.add(text)
        sentences.append(
            SourceSentence(
                id=f"{corpus_name}-{index:08d}",
                text=text,
                tokens=tokens,
                origin=f"{corpus_name}:{index}",
            )
        )
    if len(sentences) >= n:
        exhausted = False
    return CorpusSample(sentences=sentences, exhausted=exhausted)


def split_conjunctions(span_text: str) -> list[str]:
    """Split a span answer on ", ", "; ", " and ", " or "; drop empties."""
    pieces = _CONJUNCTION_RE.split(span_text)
    return [p.strip() for p in pieces if p.strip()]


@dataclass
class ParsedResponse:
    pairs: list[LabelSpanPair]
    ignored_lines: int = 0


def parse_llm_response(sentence: SourceSentence, response: str) -> ParsedResponse:
    """Extract (label, span) pairs from an LLM response.

    Total: any text parses; lines that do not match the "- Label: Span"
    pattern are counted in ``ignored_lines``.  Spans are split on
    conjunctions, so one line can yield several pairs.  Pairs are
    unaligned (no token range yet).
    """
    pairs: list[LabelSpanPair] = []
    ignored = 0
    for line in response.splitlines():
        if not line.strip():
            continue
        match = _PAIR_LINE_RE.match(line)
        if match is None:
            ignored += 1
            continue
        label = normalize_label(match.group(1))
        if not label:
            ignored += 1
            continue
        for piece in split_conjunctions(match.group(2)):
            pairs.append(LabelSpanPair(label=label, span_text=piece))
    return ParsedResponse(pairs=pairs, ignored_lines=ignored)


def align_span(sentence: SourceSentence, span_text: str) -> tuple[int, int] | None:
    """Leftmost token range matching the span text.

    Exact-case matches are preferred; otherwise the leftmost
    case-insensitive match.  Returns None when the span does not occur.
    """
    target = tokenize(span_text)
    if not target:
        return None
    width = len(target)
    tokens = sentence.tokens
    target_lower = [t.lower() for t in target]
    insensitive: tuple[int, int] | None = None
    for start in range(len(tokens) - width + 1):
        window = list(tokens[start : start + width])
        if window == target:
            return (start, start + width)
        if insensitive is None and [t.lower() for t in window] == target_lower:
            insensitive = (start, start + width)
    return insensitive


@dataclass
class SynthDiagnostics:
    """Counts reported alongside a synthesized dataset."""

    sentences: int = 0
    corpus_exhausted: bool = False
    requests: int = 0
    retries: int = 0
    failed_sentences: int = 0
    ignored_lines: int = 0
    parsed_pairs: int = 0
    dropped_unaligned: int = 0
    dropped_duplicates: int = 0
    aligned_pairs: int = 0

    @property
    def drop_rate(self) -> float:
        return self.dropped_unaligned / self.parsed_pairs if self.parsed_pairs else 0.0

    def as_dict(self) -> dict:
        return {
            "sentences": self.sentences,
            "corpus_exhausted": self.corpus_exhausted,
            "requests": self.requests,
            "retries": self.retries,
            "failed_sentences": self.failed_sentences,
            "ignored_lines": self.ignored_lines,
            "parsed_pairs": self.parsed_pairs,
            "dropped_unaligned": self.dropped_unaligned,
            "dropped_duplicates": self.dropped_duplicates,
            "aligned_pairs": self.aligned_pairs,
            "drop_rate": self.drop_rate,
        }


@dataclass
class SynthResult:
    records: list[DistillRecord]
    diagnostics: SynthDiagnostics


def annotate_sentence(
    sentence: SourceSentence,
    client: LLMClient,
    retry: RetryPolicy = RetryPolicy(),
    sleep: Callable[[float], None] = time.sleep,
) -> tuple[DistillRecord, SynthDiagnostics]:
    """Prompt, parse, split and align one sentence into a record."""
    diag = SynthDiagnostics(sentences=1, requests=1)
    prompt = build_prompt(sentence)
    try:
        response, retries = complete_with_retry(client, prompt, retry, sleep)
    except PermanentLLMError as exc:
        diag.failed_sentences = 1
        record = DistillRecord(sentence=sentence, pairs=(), raw_response="", error=str(exc))
        return record, diag
    diag.retries = retries
    parsed = parse_llm_response(sentence, response)
    diag.ignored_lines = parsed.ignored_lines
    diag.parsed_pairs = len(parsed.pairs)
    aligned: list[LabelSpanPair] = []
    seen: set[tuple[str, tuple[int, int]]] = set()
    for pair in parsed.pairs:
        token_range = align_span(sentence, pair.span_text)
        if token_range is None:
            diag.dropped_unaligned += 1
            continue
        key = (pair.label, token_range)
        if key in seen:
            diag.dropped_duplicates += 1
            continue
        seen.add(key)
        aligned.append(
            LabelSpanPair(label=pair.label, span_text=pair.span_text, token_range=token_range)
        )
    diag.aligned_pairs = len(aligned)
    record = DistillRecord(sentence=sentence, pairs=tuple(aligned), raw_response=response)
    return record, diag


def _merge(total: SynthDiagnostics, one: SynthDiagnostics) -> None:
    total.sentences += one.sentences
    total.requests += one.requests
    total.retries += one.retries
    total.failed_sentences += one.failed_sentences
    total.ignored_lines += one.ignored_lines
    total.parsed_pairs += one.parsed_pairs
    total.dropped_unaligned += one.dropped_unaligned
    total.dropped_duplicates += one.dropped_duplicates
    total.aligned_pairs += one.aligned_pairs


def synthesize(
    corpus_stream: Iterable[str],
    client: LLMClient,
    n: int,
    parallelism: int = 1,
    retry: RetryPolicy = RetryPolicy(),
    corpus_name: str = "corpus",
    sleep: Callable[[float], None] = time.sleep,
) -> SynthResult:
    """Annotate up to ``n`` corpus sentences with the LLM.

    Requests run concurrently up to ``parallelism``; records come back
    sorted by sentence id regardless of completion order, so output is a
    deterministic function of (corpus, client, n) for a deterministic
    client.
    """
    sample = sample_sentences(corpus_stream, n, corpus_name=corpus_name)
    totals = SynthDiagnostics(corpus_exhausted=sample.exhausted)

    def work(sentence: SourceSentence) -> tuple[DistillRecord, SynthDiagnostics]:
        return annotate_sentence(sentence, client, retry, sleep)

    if parallelism <= 1:
        outcomes = [work(s) for s in sample.sentences]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(work, sample.sentences))

    records = []
    for record, diag in outcomes:
        _merge(totals, diag)
        records.append(record)
    records.sort(key=lambda r: r.sentence.id)
    return SynthResult(records=records, diagnostics=totals)


_BUCKETS = ("1", "2", "3", "4", "5+")


@dataclass(frozen=True)
class LabelEntry:
    label: str
    count: int
    relative_frequency: float


@dataclass
class LabelBucket:
    total: int = 0
    entries: list[LabelEntry] = field(default_factory=list)


@dataclass
class LabelStats:
    """Label occurrence counts grouped by label token count (1..4, 5+)."""

    buckets: dict[str, LabelBucket]

    def as_dict(self) -> dict:
        return {
            name: {
                "total": bucket.total,
                "entries": [
                    {
                        "label": e.label,
                        "count": e.count,
                        "relative_frequency": e.relative_frequency,
                    }
                    for e in bucket.entries
                ],
            }
            for name, bucket in self.buckets.items()
        }


def bucket_of(label: str) -> str:
    n = len(label.split())
    return str(n) if n < 5 else "5+"


def label_stats(records: Iterable[DistillRecord], top_k: int | None = 8) -> LabelStats:
    """Count label occurrences per n-gram bucket.

    Entries are sorted by descending count (label as tiebreak) and
    truncated to ``top_k`` per bucket; relative frequencies are always
    computed against the full bucket total.
    """
    counts: dict[str, dict[str, int]] = {name: {} for name in _BUCKETS}
    for record in records:
        for pair in record.pairs:
            bucket = counts[bucket_of(pair.label)]
            bucket[pair.label] = bucket.get(pair.label, 0) + 1
    stats = LabelStats(buckets={name: LabelBucket() for name in _BUCKETS})
    for name, bucket_counts in counts.items():
        total = sum(bucket_counts.values())
        stats.buckets[name].total = total
        ordered = sorted(bucket_counts.items(), key=lambda kv: (-kv[1], kv[0]))
        if top_k is not None:
            ordered = ordered[:top_k]
        stats.buckets[name].entries = [
            LabelEntry(label=label, count=count, relative_frequency=count / total)
            for label, count in ordered
        ]
    return stats


def render_label_stats(stats: LabelStats) -> str:
    """Aligned text table of per-bucket label counts and frequencies."""
    lines = [f"{'n-gram':<8} {'count':>9}  top labels (relative frequency)"]
    for name in _BUCKETS:
        bucket = stats.buckets[name]
        entries = ", ".join(
            f"{e.label} ({e.relative_frequency:.2%})" for e in bucket.entries
        )
        lines.append(f"{name + '-gram':<8} {bucket.total:>9,}  {entries}")
    return "\n".join(lines)


def subsample(
    records: Sequence[DistillRecord], k: int, seed: int
) -> list[DistillRecord]:
    """Uniform sample without replacement, deterministic per seed.

    Preserves the input order of the chosen records.
    """
    if k > len(records):
        raise ValueError(f"cannot sample {k} of {len(records)} records")
    rng = random.Random(seed)
    indices = sorted(rng.sample(range(len(records)), k))
    return [records[i] for i in indices]
