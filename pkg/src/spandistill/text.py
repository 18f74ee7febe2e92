"""Word tokenization, detokenization and sentence splitting.

Everything here is rule-based and deterministic so that datasets built on
different machines are byte-identical.
"""

from __future__ import annotations

import re

_WORD_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)

# Punctuation that attaches to the preceding / following token when
# reassembling text from tokens.
_NO_SPACE_BEFORE = set(".,;:!?%)]}…’”»")
_NO_SPACE_AFTER = set("([{$‘“«#")

_SENTENCE_END_RE = re.compile(r"[.!?][\"'’”)\]]*\s+")
_QUOTE_CHARS = "\"'‘’“”(«["


def tokenize(text: str) -> list[str]:
    """Split text into word and punctuation tokens."""
    return _WORD_RE.findall(text)


def detokenize(tokens: list[str] | tuple[str, ...]) -> str:
    """Join tokens back into a string, reattaching punctuation.

    Inverse of :func:`tokenize` up to whitespace: for any text,
    ``tokenize(detokenize(tokenize(text))) == tokenize(text)``.
    """
    parts: list[str] = []
    prev = ""
    for tok in tokens:
        if not parts:
            parts.append(tok)
        elif tok and tok[0] in _NO_SPACE_BEFORE:
            parts.append(tok)
        elif prev and prev[-1] in _NO_SPACE_AFTER:
            parts.append(tok)
        else:
            parts.append(" " + tok)
        prev = tok
    return "".join(parts)


def normalize(text: str) -> str:
    """Canonical surface form used when comparing spans to token ranges."""
    return detokenize(tokenize(text))


def split_sentences(paragraph: str) -> list[str]:
    """Split a paragraph at terminal punctuation followed by whitespace and
    an uppercase letter or opening quote.

    Deliberately simple: no abbreviation list, no learned model, so the
    split is reproducible everywhere.
    """
    text = paragraph.strip()
    if not text:
        return []
    sentences: list[str] = []
    start = 0
    for match in _SENTENCE_END_RE.finditer(text):
        nxt = match.end()
        if nxt >= len(text):
            break
        ch = text[nxt]
        if ch.isupper() or ch in _QUOTE_CHARS:
            sentences.append(text[start : match.end()].strip())
            start = nxt
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


def first_sentence(paragraph: str) -> str | None:
    """First sentence of a paragraph, or None for blank input."""
    sentences = split_sentences(paragraph)
    return sentences[0] if sentences else None
