"""Micro precision/recall/F1 over predicted vs gold task tuples.

Matching is exact on (kind, values) after the mode's projection, with
multiset multiplicity.  Modes cover the task-specific views: RE scored on
entities or full relation triples, EE scored unlabeled on triggers or
trigger-argument pairs.  Unlabeled and entity projections count unique
projected tuples per sentence.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .tagger import Tagger
from .tasks import TaskItem, TaskSchema, TaskTuple, predict_task

MODES = ("full", "re-entity", "re-relation", "ee-trigger-unlabeled", "ee-argument-unlabeled")

_MODE_TASK = {
    "re-entity": "RE",
    "re-relation": "RE",
    "ee-trigger-unlabeled": "EE",
    "ee-argument-unlabeled": "EE",
}


def _label_of(kind: str, values: tuple[str, ...]) -> str:
    if kind == "relation" or kind == "role":
        return values[1]
    if kind == "triple":
        return values[2]
    return values[0] if values else kind


def project(tuples: Iterable[TaskTuple], mode: str) -> list[tuple[str, tuple]]:
    """Project tuples per mode into (label, match_key) pairs."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    required = _MODE_TASK.get(mode)
    out: list[tuple[str, tuple]] = []
    for t in tuples:
        if required is not None and t.task != required:
            raise ValueError(f"mode {mode!r} expects task {required}, got {t.task}")
        if mode == "full":
            out.append((_label_of(t.kind, t.values), (t.kind,) + t.values))
        elif mode == "re-entity" and t.kind == "entity":
            out.append((t.values[0], (t.kind,) + t.values))
        elif mode == "re-relation" and t.kind == "relation":
            out.append((t.values[1], (t.kind,) + t.values))
        elif mode == "ee-trigger-unlabeled" and t.kind == "trigger":
            out.append(("trigger", (t.kind,) + t.values[1:]))
        elif mode == "ee-argument-unlabeled" and t.kind == "argument":
            out.append(("argument", (t.kind,) + t.values[1:]))
    if mode in ("re-entity", "ee-trigger-unlabeled", "ee-argument-unlabeled"):
        # Projections that merge mentions count unique tuples.
        seen: set[tuple] = set()
        unique = []
        for label, key in out:
            if key not in seen:
                seen.add(key)
                unique.append((label, key))
        return unique
    return out


@dataclass
class LabelScores:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def as_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
        }


@dataclass
class EvalReport:
    mode: str
    overall: LabelScores = field(default_factory=LabelScores)
    per_label: dict[str, LabelScores] = field(default_factory=dict)

    @property
    def precision(self) -> float:
        return self.overall.precision

    @property
    def recall(self) -> float:
        return self.overall.recall

    @property
    def f1(self) -> float:
        return self.overall.f1

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            **self.overall.as_dict(),
            "per_label": {k: v.as_dict() for k, v in sorted(self.per_label.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)

    def render_table(self) -> str:
        width = max([len("<all>")] + [len(l) for l in self.per_label]) + 2
        lines = [
            f"{'label':<{width}} {'P':>8} {'R':>8} {'F1':>8} {'tp':>6} {'fp':>6} {'fn':>6}",
            "-" * (width + 48),
        ]

        def row(name: str, s: LabelScores) -> str:
            return (
                f"{name:<{width}} {s.precision:>8.4f} {s.recall:>8.4f} "
                f"{s.f1:>8.4f} {s.tp:>6} {s.fp:>6} {s.fn:>6}"
            )

        lines.append(row("<all>", self.overall))
        for label in sorted(self.per_label):
            lines.append(row(label, self.per_label[label]))
        lines.append(f"mode: {self.mode}")
        return "\n".join(lines)

    def to_csv_row(self, run: str = "") -> str:
        s = self.overall
        return (
            f"{run},{self.mode},{s.precision:.6f},{s.recall:.6f},{s.f1:.6f},"
            f"{s.tp},{s.fp},{s.fn}"
        )


CSV_HEADER = "run,mode,precision,recall,f1,tp,fp,fn"


def _accumulate(
    report: EvalReport,
    pred_pairs: list[tuple[str, tuple]],
    gold_pairs: list[tuple[str, tuple]],
) -> None:
    pred_counts = Counter(key for _, key in pred_pairs)
    gold_counts = Counter(key for _, key in gold_pairs)
    labels = {key: label for label, key in gold_pairs}
    labels.update({key: label for label, key in pred_pairs})
    for key in pred_counts.keys() | gold_counts.keys():
        tp = min(pred_counts[key], gold_counts[key])
        fp = pred_counts[key] - tp
        fn = gold_counts[key] - tp
        report.overall.tp += tp
        report.overall.fp += fp
        report.overall.fn += fn
        per = report.per_label.setdefault(labels[key], LabelScores())
        per.tp += tp
        per.fp += fp
        per.fn += fn


def micro_f1(
    preds: Iterable[TaskTuple], golds: Iterable[TaskTuple], mode: str = "full"
) -> EvalReport:
    """Exact-match micro P/R/F1 between two tuple multisets.

    Duplicates match with multiplicity; 0/0 ratios are defined as 0.
    """
    preds = list(preds)
    golds = list(golds)
    tasks = {t.task for t in preds} | {t.task for t in golds}
    if len(tasks) > 1:
        raise ValueError(f"mixed tasks in evaluation: {sorted(tasks)}")
    report = EvalReport(mode=mode)
    _accumulate(report, project(preds, mode), project(golds, mode))
    return report


def evaluate_run(
    schema: TaskSchema,
    tagger: Tagger,
    dataset: Sequence[TaskItem],
    mode: str = "full",
) -> EvalReport:
    """Predict every sentence and aggregate per-sentence counts."""
    report = EvalReport(mode=mode)
    for item in dataset:
        preds = predict_task(schema, item.sentence, tagger)
        _accumulate(report, project(preds, mode), project(list(item.gold), mode))
    return report
