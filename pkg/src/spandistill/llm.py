"""LLM clients used to annotate raw sentences.

A client is anything with ``complete(prompt) -> str``.  Transient failures
(rate limits, 5xx) raise :class:`TransientLLMError` and are retried with
bounded exponential backoff; anything else counts as a permanent failure
for that sentence.

:class:`MockLLMClient` is a deterministic rule-based stand-in for offline
dataset generation and tests: it reads the sentence back out of the prompt
and emits "- Label: Span" lines from a gazetteer plus a couple of surface
rules, never touching the network.
"""

from __future__ import annotations

import os
import re
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol, Sequence

import requests


class LLMError(Exception):
    """Base class for annotation failures."""


class TransientLLMError(LLMError):
    """Retryable failure (rate limit, timeout, 5xx)."""


class PermanentLLMError(LLMError):
    """Non-retryable failure; the sentence is recorded with an error marker."""


class LLMClient(Protocol):
    def complete(self, prompt: str) -> str: ...


@dataclass(frozen=True)
class RetryPolicy:
    """Bounded backoff for transient failures."""

    max_retries: int = 3
    backoff_base: float = 0.5
    backoff_factor: float = 2.0

    def delay(self, attempt: int) -> float:
        return self.backoff_base * self.backoff_factor**attempt


def complete_with_retry(
    client: LLMClient,
    prompt: str,
    policy: RetryPolicy = RetryPolicy(),
    sleep: Callable[[float], None] = time.sleep,
) -> tuple[str, int]:
    """Call the client, retrying transient failures.

    Returns (response, retry_count).  Raises PermanentLLMError once retries
    are exhausted or the client fails permanently.
    """
    retries = 0
    while True:
        try:
            return client.complete(prompt), retries
        except TransientLLMError as exc:
            if retries >= policy.max_retries:
                raise PermanentLLMError(
                    f"gave up after {retries} retries: {exc}"
                ) from exc
            sleep(policy.delay(retries))
            retries += 1
        except PermanentLLMError:
            raise
        except Exception as exc:
            raise PermanentLLMError(str(exc)) from exc


_SENTENCE_LINE_RE = re.compile(r"^Sentence:\s*(.*)$", re.MULTILINE)
_CAPITALIZED_RUN_RE = re.compile(r"\b(?:[A-Z][a-z]+)(?: [A-Z][a-z]+)*\b")
_YEAR_RE = re.compile(r"\b(1[0-9]{3}|20[0-9]{2})\b")


@dataclass
class MockLLMClient:
    """Deterministic gazetteer-based annotator; zero network calls.

    ``gazetteer`` maps an IE label to the phrases it should extract.
    Matches are emitted in sentence order; capitalized runs not covered by
    the gazetteer fall back to the label "Name", four-digit years to
    "Year".
    """

    gazetteer: Mapping[str, Sequence[str]] = field(default_factory=dict)
    fallback_names: bool = True
    call_count: int = 0
    fail_on: Callable[[str], Exception | None] | None = None

    def complete(self, prompt: str) -> str:
        self.call_count += 1
        if self.fail_on is not None:
            exc = self.fail_on(prompt)
            if exc is not None:
                raise exc
        sentence = self._sentence_from_prompt(prompt)
        found: list[tuple[int, str, str]] = []
        covered: list[tuple[int, int]] = []
        for label in sorted(self.gazetteer):
            for phrase in self.gazetteer[label]:
                for match in re.finditer(re.escape(phrase), sentence):
                    found.append((match.start(), label, phrase))
                    covered.append((match.start(), match.end()))
        if self.fallback_names:
            for match in _CAPITALIZED_RUN_RE.finditer(sentence):
                if any(s < match.end() and match.start() < e for s, e in covered):
                    continue
                found.append((match.start(), "Name", match.group()))
            for match in _YEAR_RE.finditer(sentence):
                found.append((match.start(), "Year", match.group()))
        found.sort()
        return "\n".join(f"- {label}: {span}" for _, label, span in found)

    @staticmethod
    def _sentence_from_prompt(prompt: str) -> str:
        match = _SENTENCE_LINE_RE.search(prompt)
        return match.group(1) if match else prompt.strip().splitlines()[-1]


API_KEY_ENV = "OPENAI_API_KEY"
DEFAULT_API_BASE = "https://api.openai.com/v1"


@dataclass
class OpenAIChatClient:
    """Minimal chat-completions client for OpenAI-compatible endpoints.

    The API key is read from the ``OPENAI_API_KEY`` environment variable;
    everything else (model, temperature, token cap) comes in as
    configuration.
    """

    model: str = "gpt-3.5-turbo"
    temperature: float = 0.0
    max_tokens: int = 256
    api_base: str = DEFAULT_API_BASE
    timeout: float = 60.0
    session: requests.Session | None = None

    def __post_init__(self) -> None:
        key = os.environ.get(API_KEY_ENV, "")
        if not key:
            raise PermanentLLMError(
                f"no API key: set {API_KEY_ENV} or use the mock client"
            )
        self._key = key
        if self.session is None:
            self.session = requests.Session()

    def complete(self, prompt: str) -> str:
        payload = {
            "model": self.model,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "messages": [{"role": "user", "content": prompt}],
        }
        try:
            response = self.session.post(
                f"{self.api_base.rstrip('/')}/chat/completions",
                json=payload,
                headers={"Authorization": f"Bearer {self._key}"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransientLLMError(f"request failed: {exc}") from exc
        if response.status_code == 429 or response.status_code >= 500:
            raise TransientLLMError(f"HTTP {response.status_code}")
        if response.status_code != 200:
            raise PermanentLLMError(f"HTTP {response.status_code}: {response.text[:200]}")
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise PermanentLLMError(f"unexpected response shape: {exc}") from exc
