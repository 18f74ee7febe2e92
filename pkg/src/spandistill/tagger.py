"""Pluggable sequence taggers and the training harness.

A tagger fits on label-prefixed BIO examples and predicts a per-token tag
distribution over the sentence body.  Taggers follow the scikit-learn
estimator conventions (``get_params``/``set_params``, trailing-underscore
fitted attributes, ``NotFittedError``), so they compose with the wider
ecosystem; :class:`HashedWindowTagger` is the bundled desk-scale model, a
per-token 3-way softmax over hashed context-window and label-crossed
features, trained with decoupled-weight-decay adaptive moments and a
cosine-annealed learning rate.
"""

from __future__ import annotations

import hashlib
import json
import math
from copy import deepcopy
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .codec import TAGS, TagDistribution, TaggedExample

_TAG_INDEX = {t: i for i, t in enumerate(TAGS)}


@dataclass(frozen=True)
class TrainConfig:
    """Fine-tuning settings.

    Defaults mirror the training protocol the toolkit targets: adaptive
    moments with decoupled weight decay, cosine annealing without warmup,
    learning rate 2e-5, batch size 64, a single epoch.  Values not pinned
    anywhere (weight decay, epsilon) are declared here and surfaced in run
    manifests rather than guessed.
    """

    learning_rate: float = 2e-5
    weight_decay: float = 0.01
    batch_size: int = 64
    epochs: int = 1
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        return cls(**doc)


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes non-finite."""


@dataclass(frozen=True)
class BatchRecord:
    epoch: int
    batch: int
    loss: float
    lr: float


@dataclass
class TrainingLog:
    """Per-batch loss/learning-rate trace of one fit call."""

    n_examples: int = 0
    batch_size: int = 0
    entries: list[BatchRecord] = field(default_factory=list)

    @property
    def batches_per_epoch(self) -> int:
        if not self.batch_size:
            return 0
        return math.ceil(self.n_examples / self.batch_size)

    @property
    def epochs_run(self) -> int:
        return max((e.epoch for e in self.entries), default=-1) + 1

    def to_jsonl(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for entry in self.entries:
                fh.write(json.dumps(asdict(entry)) + "\n")


@runtime_checkable
class Tagger(Protocol):
    """Anything that fits BIO examples and predicts tag distributions.

    The contract is word-level: ``predict`` returns one (B, I, O) triple
    per body token.  Adapters wrapping subword models own the alignment
    (first subword carries the word's tag, continuations are masked from
    the loss).
    """

    def fit(self, examples: Sequence[TaggedExample], config: TrainConfig) -> "Tagger": ...

    def predict(self, example: TaggedExample) -> TagDistribution: ...


def _validate_training_examples(examples: Sequence[TaggedExample]) -> None:
    if not examples:
        raise ValueError("no training examples")
    for example in examples:
        if example.tags is None:
            raise ValueError(f"untagged example for label {example.label!r}")


def fit_tagger(
    tagger: Tagger, examples: Sequence[TaggedExample], config: TrainConfig
) -> tuple[Tagger, TrainingLog]:
    """Train a tagger and return it with its training log."""
    _validate_training_examples(examples)
    tagger.fit(examples, config)
    log = getattr(tagger, "training_log_", None)
    if log is None:
        log = TrainingLog(n_examples=len(examples), batch_size=config.batch_size)
    return tagger, log


def _stable_hash(key: str, n_buckets: int) -> int:
    digest = hashlib.blake2s(key.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % n_buckets


def _word_shape(token: str) -> str:
    if token.isdigit():
        return "digit"
    if not any(ch.isalnum() for ch in token):
        return "punct"
    if token.isupper():
        return "upper"
    if token[:1].isupper():
        return "cap"
    if token.islower():
        return "lower"
    return "mixed"


class HashedWindowTagger(BaseEstimator):
    """Per-token logistic B/I/O classifier over hashed features.

    Each body position sees its surrounding word window, neighboring word
    shapes, and features crossing the query label with the current word
    and shape; that crossing is what lets one model serve arbitrary
    labels.  Fitting re-initializes the weights unless ``warm_start`` is
    true (so a distilled model can be fine-tuned further).
    """

    def __init__(
        self,
        n_features: int = 2**16,
        window: int = 2,
        warm_start: bool = False,
    ):
        self.n_features = n_features
        self.window = window
        self.warm_start = warm_start

    # -- feature extraction -------------------------------------------------

    def _featurize(self, example: TaggedExample) -> np.ndarray:
        """Feature index matrix of shape (n_body_tokens, features)."""
        words = [t.lower() for t in example.body_tokens]
        shapes = [_word_shape(t) for t in example.body_tokens]
        label = example.label.lower()
        n = len(words)
        # bias + word window + shape window (3) + label, label x word/shape
        rows = np.empty((n, 2 * self.window + 8), dtype=np.int64)
        for pos in range(n):
            keys = ["bias"]
            for off in range(-self.window, self.window + 1):
                p = pos + off
                word = words[p] if 0 <= p < n else "<pad>"
                keys.append(f"w{off}={word}")
            for off in (-1, 0, 1):
                p = pos + off
                shape = shapes[p] if 0 <= p < n else "<pad>"
                keys.append(f"s{off}={shape}")
            keys.append(f"lab={label}")
            keys.append(f"lab:w={label}|{words[pos]}")
            keys.append(f"lab:s={label}|{shapes[pos]}")
            rows[pos] = [_stable_hash(k, self.n_features) for k in keys]
        return rows

    def _logits(self, rows: np.ndarray) -> np.ndarray:
        return self.weights_[rows].sum(axis=1)

    # -- estimator API ------------------------------------------------------

    def fit(
        self, examples: Sequence[TaggedExample], config: TrainConfig = TrainConfig()
    ) -> "HashedWindowTagger":
        _validate_training_examples(examples)
        if not (self.warm_start and hasattr(self, "weights_")):
            self.weights_ = np.zeros((self.n_features, len(TAGS)))

        features = [self._featurize(ex) for ex in examples]
        targets = [
            np.array([_TAG_INDEX[t] for t in ex.tags], dtype=np.int64) for ex in examples
        ]

        rng = np.random.default_rng(config.seed)
        m = np.zeros_like(self.weights_)
        v = np.zeros_like(self.weights_)
        n = len(examples)
        batches_per_epoch = math.ceil(n / config.batch_size)
        total_steps = config.epochs * batches_per_epoch
        log = TrainingLog(n_examples=n, batch_size=config.batch_size)

        step = 0
        for epoch in range(config.epochs):
            order = rng.permutation(n)
            for batch_index in range(batches_per_epoch):
                chosen = order[
                    batch_index * config.batch_size : (batch_index + 1) * config.batch_size
                ]
                rows = np.concatenate([features[i] for i in chosen])
                y = np.concatenate([targets[i] for i in chosen])

                logits = self._logits(rows)
                logits -= logits.max(axis=1, keepdims=True)
                exp = np.exp(logits)
                probs = exp / exp.sum(axis=1, keepdims=True)
                loss = float(-np.mean(np.log(probs[np.arange(len(y)), y] + 1e-30)))
                if not math.isfinite(loss):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch} batch {batch_index}"
                    )

                grad_rows = probs
                grad_rows[np.arange(len(y)), y] -= 1.0
                grad_rows /= len(y)
                grad = np.zeros_like(self.weights_)
                np.add.at(grad, rows.ravel(), np.repeat(grad_rows, rows.shape[1], axis=0))

                lr = config.learning_rate * 0.5 * (1 + math.cos(math.pi * step / total_steps))
                m = config.beta1 * m + (1 - config.beta1) * grad
                v = config.beta2 * v + (1 - config.beta2) * grad**2
                m_hat = m / (1 - config.beta1 ** (step + 1))
                v_hat = v / (1 - config.beta2 ** (step + 1))
                self.weights_ -= lr * m_hat / (np.sqrt(v_hat) + config.eps)
                self.weights_ -= lr * config.weight_decay * self.weights_

                log.entries.append(
                    BatchRecord(epoch=epoch, batch=batch_index, loss=loss, lr=lr)
                )
                step += 1

        self.training_log_ = log
        self.train_config_ = config
        return self

    def predict(self, example: TaggedExample) -> TagDistribution:
        if not hasattr(self, "weights_"):
            raise NotFittedError("tagger is not fitted; call fit first")
        rows = self._featurize(example)
        logits = self._logits(rows)
        logits -= logits.max(axis=1, keepdims=True)
        exp = np.exp(logits)
        return TagDistribution(exp / exp.sum(axis=1, keepdims=True))

    def copy(self) -> "HashedWindowTagger":
        return deepcopy(self)

    # -- persistence --------------------------------------------------------

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        if not hasattr(self, "weights_"):
            raise NotFittedError("cannot save an unfitted tagger")
        np.savez_compressed(directory / "weights.npz", weights=self.weights_)
        meta = {"kind": "hashed", **self.get_params()}
        (directory / "tagger.json").write_text(json.dumps(meta, indent=2), "utf-8")

    @classmethod
    def load(cls, directory: str | Path) -> "HashedWindowTagger":
        directory = Path(directory)
        meta = json.loads((directory / "tagger.json").read_text("utf-8"))
        meta.pop("kind", None)
        tagger = cls(**meta)
        with np.load(directory / "weights.npz") as data:
            tagger.weights_ = data["weights"]
        return tagger


class LookupTagger(BaseEstimator):
    """Memorizing tagger: predicts stored tags for known (label, body) keys.

    Unseen inputs get an all-O distribution.  Useful as an oracle in tests
    and for pipeline smoke checks.
    """

    def __init__(self, confidence: float = 0.98):
        self.confidence = confidence

    def fit(
        self, examples: Sequence[TaggedExample], config: TrainConfig = TrainConfig()
    ) -> "LookupTagger":
        _validate_training_examples(examples)
        self.memory_ = {
            (ex.label, ex.body_tokens): ex.tags for ex in examples
        }
        return self

    def predict(self, example: TaggedExample) -> TagDistribution:
        if not hasattr(self, "memory_"):
            raise NotFittedError("tagger is not fitted; call fit first")
        tags = self.memory_.get(
            (example.label, example.body_tokens), ("O",) * len(example.body_tokens)
        )
        return TagDistribution.from_tags(tags, confidence=self.confidence)


TAGGER_REGISTRY = {
    "hashed": HashedWindowTagger,
    "lookup": LookupTagger,
}
