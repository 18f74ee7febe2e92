"""Task schemas: each IE task family expressed as label-to-span queries.

A schema declares ordered extraction stages (stage k's query labels may
embed spans found at earlier stages, e.g. "John Smith births in"), how to
derive training queries from gold annotations, and how to assemble stage
outputs back into task-level tuples.  Six families ship out of the box:
NER, RE, EE, SRL, ABSA and ASTE.
"""

from __future__ import annotations

import json
import math
import random
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .codec import (
    ScoredSpan,
    TaggedExample,
    align_tags,
    decode_with_probs,
    encode_query,
    resolve_conflicts,
)
from .records import DataError, SourceSentence
from .synth import align_span
from .tagger import Tagger
from .text import detokenize


class PredictionError(RuntimeError):
    """A tagger failure while predicting one sentence."""


@dataclass(frozen=True)
class TaskTuple:
    """A task-level structured result, e.g. ("RE", "relation",
    ("John Smith", "births in", "Los Angeles"))."""

    task: str
    kind: str
    values: tuple[str, ...]


@dataclass(frozen=True)
class TaskItem:
    """One dataset sentence with its gold task tuples."""

    sentence: SourceSentence
    gold: tuple[TaskTuple, ...] = ()

    @property
    def id(self) -> str:
        return self.sentence.id


@dataclass(frozen=True)
class QueryTemplate:
    """A label template; placeholders bind to prior-stage span roles."""

    label_template: str
    answer_role: str
    fixed: tuple[tuple[str, str], ...] = ()

    @property
    def placeholders(self) -> frozenset[str]:
        return frozenset(
            name
            for _, name, _, _ in string.Formatter().parse(self.label_template)
            if name
        )

    @property
    def fixed_dict(self) -> dict[str, str]:
        return dict(self.fixed)


@dataclass(frozen=True)
class StageSpec:
    templates: tuple[QueryTemplate, ...]


@dataclass(frozen=True)
class Query:
    """A fully instantiated (label, sentence) extraction query."""

    label: str
    sentence: SourceSentence
    stage: int
    answer_role: str
    bindings: tuple[tuple[str, str], ...]

    @property
    def bindings_dict(self) -> dict[str, str]:
        return dict(self.bindings)


@dataclass(frozen=True)
class Extraction:
    """One span extracted by some stage's query, with its env bindings."""

    stage: int
    label: str
    start: int
    end: int
    span_text: str
    score: float
    bindings: tuple[tuple[str, str], ...]

    @property
    def bindings_dict(self) -> dict[str, str]:
        return dict(self.bindings)


class TaskSchema:
    """Base class: stage validation plus the shared query machinery."""

    task: str = ""

    def __init__(self, stages: Sequence[StageSpec]):
        if not stages:
            raise ValueError("a task schema needs at least one stage")
        self.stages = tuple(stages)
        available: set[str] = set()
        for index, stage in enumerate(self.stages):
            for template in stage.templates:
                unresolved = (
                    template.placeholders - set(template.fixed_dict) - available
                )
                if unresolved:
                    raise ValueError(
                        f"stage {index} placeholders {sorted(unresolved)} do not "
                        "resolve to a prior-stage span role"
                    )
            for template in stage.templates:
                available.add(template.answer_role)
                available.update(template.fixed_dict)

    # Task-specific hooks -------------------------------------------------

    def assemble_tuples(self, stage_extractions: Sequence[Sequence[Extraction]]) -> list[TaskTuple]:
        raise NotImplementedError

    def gold_answers(self, item: TaskItem, query: Query) -> list[str]:
        """Gold span texts the query should extract, from the item's tuples."""
        raise NotImplementedError

    def gold_anchor_bindings(self, item: TaskItem, stage: int) -> list[dict[str, str]]:
        """Binding environments gold stage-1 spans would have produced."""
        return []

    def fewshot_labels(self, item: TaskItem) -> set[str]:
        """The per-label sampling keys this item covers."""
        raise NotImplementedError

    def config_dict(self) -> dict:
        raise NotImplementedError


def _dedupe(values: Iterable) -> list:
    seen = set()
    out = []
    for value in values:
        key = tuple(sorted(value.items())) if isinstance(value, dict) else value
        if key not in seen:
            seen.add(key)
            out.append(value)
    return out


def build_queries(
    schema: TaskSchema,
    sentence: SourceSentence,
    stage_index: int,
    prior: Sequence[Extraction] | Sequence[Mapping[str, str]] = (),
) -> list[Query]:
    """Instantiate one query per (template, prior binding) at a stage.

    ``prior`` carries the extractions (or bare binding mappings) from all
    earlier stages; stage 0 ignores it.
    """
    if stage_index >= len(schema.stages):
        raise ValueError(f"stage {stage_index} of {len(schema.stages)}")
    envs: list[dict[str, str]]
    if stage_index == 0:
        envs = [{}]
    else:
        envs = [
            dict(p.bindings) if isinstance(p, Extraction) else dict(p) for p in prior
        ]
    queries: list[Query] = []
    seen_labels: set[str] = set()
    for template in schema.stages[stage_index].templates:
        matched = False
        for env in envs:
            values = {**env, **template.fixed_dict}
            if not template.placeholders <= values.keys():
                continue
            matched = True
            label = template.label_template.format(**values)
            if label in seen_labels:
                continue
            seen_labels.add(label)
            queries.append(
                Query(
                    label=label,
                    sentence=sentence,
                    stage=stage_index,
                    answer_role=template.answer_role,
                    bindings=tuple(sorted(values.items())),
                )
            )
        if envs and not matched:
            raise ValueError(
                f"placeholders {sorted(template.placeholders)} unresolved by "
                f"prior spans at stage {stage_index}"
            )
    return queries


def assemble(
    schema: TaskSchema, stage_outputs: Sequence[Sequence[Extraction]]
) -> list[TaskTuple]:
    """Map stage extractions to task tuples, dropping duplicates."""
    return _dedupe(schema.assemble_tuples(stage_outputs))


class GoldAlignmentError(ValueError):
    """A gold span could not be aligned (or encoded) for an item."""


def training_queries(
    schema: TaskSchema, item: TaskItem
) -> list[tuple[Query, TaggedExample]]:
    """All (query, tagged example) training pairs one item generates.

    Stage-1 queries enumerate the schema's label set; later stages are
    instantiated with gold spans.  Queries whose label has no gold answer
    yield all-O negatives.  Raises :class:`GoldAlignmentError` when a gold
    span cannot be aligned or expressed in BIO.
    """
    out: list[tuple[Query, TaggedExample]] = []
    for stage_index in range(len(schema.stages)):
        if stage_index == 0:
            queries = build_queries(schema, item.sentence, 0)
        else:
            anchors = schema.gold_anchor_bindings(item, stage_index)
            queries = build_queries(schema, item.sentence, stage_index, anchors)
        for query in queries:
            ranges = []
            for text in _dedupe(schema.gold_answers(item, query)):
                token_range = align_span(item.sentence, text)
                if token_range is None:
                    raise GoldAlignmentError(
                        f"item {item.id!r}: gold span {text!r} not in sentence"
                    )
                ranges.append(token_range)
            ranges = _dedupe(sorted(ranges))
            skeleton = encode_query(query.label, item.sentence)
            try:
                example = align_tags(skeleton, ranges)
            except ValueError as exc:
                raise GoldAlignmentError(f"item {item.id!r}: {exc}") from exc
            out.append((query, example))
    return out


def to_training_examples(
    schema: TaskSchema,
    items: Sequence[TaskItem],
    skipped: list[str] | None = None,
) -> list[TaggedExample]:
    """Tagged training examples for a gold dataset.

    Items with unalignable gold spans are skipped; their ids are collected
    in ``skipped`` when given.
    """
    examples: list[TaggedExample] = []
    for item in items:
        try:
            examples.extend(ex for _, ex in training_queries(schema, item))
        except GoldAlignmentError:
            if skipped is not None:
                skipped.append(item.id)
    return examples


def predict_task(
    schema: TaskSchema, sentence: SourceSentence, tagger: Tagger
) -> list[TaskTuple]:
    """Run all stages on one sentence and assemble task tuples.

    Within each stage every label is queried, spans are decoded with
    confidence scores, and overlapping claims across labels are resolved
    greedily before the next stage runs.
    """
    stage_extractions: list[list[Extraction]] = []
    prior: list[Extraction] = []
    for stage_index in range(len(schema.stages)):
        queries = build_queries(schema, sentence, stage_index, prior)
        by_label: dict[str, Query] = {q.label: q for q in queries}
        candidates: list[ScoredSpan] = []
        for query in queries:
            skeleton = encode_query(query.label, sentence)
            try:
                dist = tagger.predict(skeleton)
            except Exception as exc:
                raise PredictionError(
                    f"tagger failed on sentence {sentence.id!r}, "
                    f"label {query.label!r}: {exc}"
                ) from exc
            if len(dist) != len(sentence.tokens):
                raise PredictionError(
                    f"tagger returned {len(dist)} tag rows for "
                    f"{len(sentence.tokens)} tokens on {sentence.id!r}"
                )
            candidates.extend(decode_with_probs(dist, query.label))
        kept = resolve_conflicts(candidates)
        extractions = []
        for span in kept:
            query = by_label[span.label]
            text = detokenize(sentence.tokens[span.start : span.end])
            bindings = dict(query.bindings)
            bindings[query.answer_role] = text
            extractions.append(
                Extraction(
                    stage=stage_index,
                    label=span.label,
                    start=span.start,
                    end=span.end,
                    span_text=text,
                    score=span.score,
                    bindings=tuple(sorted(bindings.items())),
                )
            )
        extractions.sort(key=lambda e: (e.start, e.end, e.label))
        stage_extractions.append(extractions)
        prior = [e for stage in stage_extractions for e in stage]
    return assemble(schema, stage_extractions)


# ---------------------------------------------------------------------------
# The six task families
# ---------------------------------------------------------------------------


class NerSchema(TaskSchema):
    """Named entity recognition: one query per entity type."""

    task = "NER"

    def __init__(self, labels: Sequence[str]):
        self.labels = tuple(labels)
        super().__init__(
            [
                StageSpec(
                    tuple(
                        QueryTemplate("{type}", "span", (("type", label),))
                        for label in self.labels
                    )
                )
            ]
        )

    def assemble_tuples(self, stages):
        return [
            TaskTuple(self.task, "entity", (e.bindings_dict["type"], e.span_text))
            for e in stages[0]
        ]

    def gold_answers(self, item, query):
        wanted = query.bindings_dict["type"]
        return [t.values[1] for t in item.gold if t.kind == "entity" and t.values[0] == wanted]

    def fewshot_labels(self, item):
        return {t.values[0] for t in item.gold if t.kind == "entity"}

    def config_dict(self):
        return {"task": "ner", "labels": list(self.labels)}


class ReSchema(TaskSchema):
    """Relation extraction: entities first, then one query per
    (entity, relation) asking for the tail."""

    task = "RE"

    def __init__(self, entity_labels: Sequence[str], relations: Sequence[str]):
        self.entity_labels = tuple(entity_labels)
        self.relations = tuple(relations)
        super().__init__(
            [
                StageSpec(
                    tuple(
                        QueryTemplate("{type}", "head", (("type", label),))
                        for label in self.entity_labels
                    )
                ),
                StageSpec(
                    tuple(
                        QueryTemplate("{head} {relation}", "tail", (("relation", rel),))
                        for rel in self.relations
                    )
                ),
            ]
        )

    def assemble_tuples(self, stages):
        tuples = [
            TaskTuple(self.task, "entity", (e.bindings_dict["type"], e.span_text))
            for e in stages[0]
        ]
        for e in stages[1]:
            b = e.bindings_dict
            tuples.append(
                TaskTuple(self.task, "relation", (b["head"], b["relation"], b["tail"]))
            )
        return tuples

    def gold_answers(self, item, query):
        b = query.bindings_dict
        if query.stage == 0:
            return [
                t.values[1]
                for t in item.gold
                if t.kind == "entity" and t.values[0] == b["type"]
            ]
        return [
            t.values[2]
            for t in item.gold
            if t.kind == "relation"
            and t.values[0] == b["head"]
            and t.values[1] == b["relation"]
        ]

    def gold_anchor_bindings(self, item, stage):
        return _dedupe(
            [
                {"type": t.values[0], "head": t.values[1]}
                for t in item.gold
                if t.kind == "entity"
            ]
        ) if stage == 1 else []

    def fewshot_labels(self, item):
        return {t.values[1] for t in item.gold if t.kind == "relation"}

    def config_dict(self):
        return {
            "task": "re",
            "entity_labels": list(self.entity_labels),
            "relations": list(self.relations),
        }


class EeSchema(TaskSchema):
    """Event extraction: triggers, then arguments per trigger."""

    task = "EE"

    def __init__(self, trigger_labels: Sequence[str] = ("Trigger",)):
        self.trigger_labels = tuple(trigger_labels)
        super().__init__(
            [
                StageSpec(
                    tuple(
                        QueryTemplate("{type}", "trigger", (("type", label),))
                        for label in self.trigger_labels
                    )
                ),
                StageSpec(
                    (QueryTemplate("Argument for Trigger '{trigger}'", "argument"),)
                ),
            ]
        )

    def assemble_tuples(self, stages):
        tuples = [
            TaskTuple(self.task, "trigger", (e.bindings_dict["type"], e.span_text))
            for e in stages[0]
        ]
        for e in stages[1]:
            b = e.bindings_dict
            tuples.append(
                TaskTuple(self.task, "argument", (b["type"], b["trigger"], b["argument"]))
            )
        return tuples

    def gold_answers(self, item, query):
        b = query.bindings_dict
        if query.stage == 0:
            return [
                t.values[1]
                for t in item.gold
                if t.kind == "trigger" and t.values[0] == b["type"]
            ]
        return [
            t.values[2]
            for t in item.gold
            if t.kind == "argument"
            and t.values[0] == b["type"]
            and t.values[1] == b["trigger"]
        ]

    def gold_anchor_bindings(self, item, stage):
        return _dedupe(
            [
                {"type": t.values[0], "trigger": t.values[1]}
                for t in item.gold
                if t.kind == "trigger"
            ]
        ) if stage == 1 else []

    def fewshot_labels(self, item):
        return {t.values[0] for t in item.gold if t.kind == "trigger"}

    def config_dict(self):
        return {"task": "ee", "trigger_labels": list(self.trigger_labels)}


class SrlSchema(TaskSchema):
    """Semantic role labeling: verbs, then one query per (verb, role)."""

    task = "SRL"

    def __init__(self, roles: Sequence[str]):
        self.roles = tuple(roles)
        super().__init__(
            [
                StageSpec((QueryTemplate("Verb", "verb"),)),
                StageSpec(
                    tuple(
                        QueryTemplate(
                            "{role} Argument for Verb '{verb}'",
                            "argument",
                            (("role", role),),
                        )
                        for role in self.roles
                    )
                ),
            ]
        )

    def assemble_tuples(self, stages):
        tuples = []
        for e in stages[1]:
            b = e.bindings_dict
            tuples.append(
                TaskTuple(self.task, "role", (b["verb"], b["role"], b["argument"]))
            )
        return tuples

    def gold_answers(self, item, query):
        b = query.bindings_dict
        if query.stage == 0:
            return _dedupe([t.values[0] for t in item.gold if t.kind == "role"])
        return [
            t.values[2]
            for t in item.gold
            if t.kind == "role"
            and t.values[0] == b["verb"]
            and t.values[1] == b["role"]
        ]

    def gold_anchor_bindings(self, item, stage):
        if stage != 1:
            return []
        return _dedupe([{"verb": t.values[0]} for t in item.gold if t.kind == "role"])

    def fewshot_labels(self, item):
        return {t.values[1] for t in item.gold if t.kind == "role"}

    def config_dict(self):
        return {"task": "srl", "roles": list(self.roles)}


DEFAULT_POLARITIES = ("Positive", "Negative", "Neutral")


class AbsaSchema(TaskSchema):
    """Aspect-based sentiment: one term query per polarity."""

    task = "ABSA"

    def __init__(self, polarities: Sequence[str] = DEFAULT_POLARITIES):
        self.polarities = tuple(polarities)
        super().__init__(
            [
                StageSpec(
                    tuple(
                        QueryTemplate("{polarity} Term", "term", (("polarity", p),))
                        for p in self.polarities
                    )
                )
            ]
        )

    def assemble_tuples(self, stages):
        return [
            TaskTuple(self.task, "term", (e.bindings_dict["polarity"], e.span_text))
            for e in stages[0]
        ]

    def gold_answers(self, item, query):
        wanted = query.bindings_dict["polarity"]
        return [t.values[1] for t in item.gold if t.kind == "term" and t.values[0] == wanted]

    def fewshot_labels(self, item):
        return {t.values[0] for t in item.gold if t.kind == "term"}

    def config_dict(self):
        return {"task": "absa", "polarities": list(self.polarities)}


class AsteSchema(TaskSchema):
    """Aspect-sentiment triplets: opinions per polarity, then the aspect
    each opinion is about."""

    task = "ASTE"

    def __init__(self, polarities: Sequence[str] = DEFAULT_POLARITIES):
        self.polarities = tuple(polarities)
        super().__init__(
            [
                StageSpec(
                    tuple(
                        QueryTemplate("{polarity} Opinion", "opinion", (("polarity", p),))
                        for p in self.polarities
                    )
                ),
                StageSpec((QueryTemplate("Aspect for Opinion '{opinion}'", "aspect"),)),
            ]
        )

    def assemble_tuples(self, stages):
        tuples = []
        for e in stages[1]:
            b = e.bindings_dict
            tuples.append(
                TaskTuple(self.task, "triple", (b["aspect"], b["opinion"], b["polarity"]))
            )
        return tuples

    def gold_answers(self, item, query):
        b = query.bindings_dict
        if query.stage == 0:
            return _dedupe(
                [
                    t.values[1]
                    for t in item.gold
                    if t.kind == "triple" and t.values[2] == b["polarity"]
                ]
            )
        return [
            t.values[0]
            for t in item.gold
            if t.kind == "triple"
            and t.values[1] == b["opinion"]
            and t.values[2] == b["polarity"]
        ]

    def gold_anchor_bindings(self, item, stage):
        if stage != 1:
            return []
        return _dedupe(
            [
                {"polarity": t.values[2], "opinion": t.values[1]}
                for t in item.gold
                if t.kind == "triple"
            ]
        )

    def fewshot_labels(self, item):
        return {t.values[2] for t in item.gold if t.kind == "triple"}

    def config_dict(self):
        return {"task": "aste", "polarities": list(self.polarities)}


def schema_from_config(config: dict) -> TaskSchema:
    """Build a schema from a task config mapping (see README for fields)."""
    task = config.get("task", "").lower()
    if task == "ner":
        return NerSchema(config["labels"])
    if task == "re":
        return ReSchema(config["entity_labels"], config["relations"])
    if task == "ee":
        return EeSchema(config.get("trigger_labels", ("Trigger",)))
    if task == "srl":
        return SrlSchema(config["roles"])
    if task == "absa":
        return AbsaSchema(config.get("polarities", DEFAULT_POLARITIES))
    if task == "aste":
        return AsteSchema(config.get("polarities", DEFAULT_POLARITIES))
    raise ValueError(f"unknown task {config.get('task')!r}")


# ---------------------------------------------------------------------------
# Few-shot sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FewShotSpec:
    """How to draw the few-shot fine-tuning subset."""

    rule: str  # "per-label" | "fraction" | "absolute"
    k: int | None = None
    fraction: float | None = None
    count: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.rule == "per-label":
            if not self.k or self.k < 1:
                raise ValueError("per-label rule needs k >= 1")
        elif self.rule == "fraction":
            if not self.fraction or not 0 < self.fraction <= 1:
                raise ValueError("fraction rule needs 0 < fraction <= 1")
        elif self.rule == "absolute":
            if not self.count or self.count < 1:
                raise ValueError("absolute rule needs count >= 1")
        else:
            raise ValueError(f"unknown rule {self.rule!r}")

    @classmethod
    def per_label(cls, k: int, seed: int = 0) -> "FewShotSpec":
        return cls(rule="per-label", k=k, seed=seed)

    @classmethod
    def of_fraction(cls, fraction: float, seed: int = 0) -> "FewShotSpec":
        return cls(rule="fraction", fraction=fraction, seed=seed)

    @classmethod
    def absolute(cls, count: int, seed: int = 0) -> "FewShotSpec":
        return cls(rule="absolute", count=count, seed=seed)


@dataclass
class FewShotSample:
    items: list[TaskItem]
    warnings: list[str]


def fewshot_sample(
    dataset: Sequence[TaskItem], spec: FewShotSpec, schema: TaskSchema
) -> FewShotSample:
    """Draw the few-shot subset for a task, deterministically per seed.

    per-label: for each label, k sentences containing at least one gold
    instance of it (union over labels, deduplicated; labels short of k
    contribute everything they have plus a warning).  fraction: ceil(p*N)
    uniform.  absolute: exactly m uniform.
    """
    if not dataset:
        raise ValueError("empty dataset")
    rng = random.Random(spec.seed)
    warnings: list[str] = []
    if spec.rule == "per-label":
        labels = sorted({l for item in dataset for l in schema.fewshot_labels(item)})
        chosen: set[int] = set()
        for label in labels:
            candidates = [
                i for i, item in enumerate(dataset) if label in schema.fewshot_labels(item)
            ]
            if len(candidates) < spec.k:
                warnings.append(
                    f"label {label!r}: only {len(candidates)} candidate sentences "
                    f"for k={spec.k}"
                )
                chosen.update(candidates)
            else:
                chosen.update(rng.sample(candidates, spec.k))
        indices = sorted(chosen)
    elif spec.rule == "fraction":
        m = math.ceil(spec.fraction * len(dataset))
        indices = sorted(rng.sample(range(len(dataset)), m))
    else:
        if spec.count > len(dataset):
            raise ValueError(f"cannot sample {spec.count} of {len(dataset)} items")
        indices = sorted(rng.sample(range(len(dataset)), spec.count))
    return FewShotSample(items=[dataset[i] for i in indices], warnings=warnings)


# ---------------------------------------------------------------------------
# Dataset IO
# ---------------------------------------------------------------------------


def task_item_to_dict(item: TaskItem) -> dict:
    return {
        "id": item.sentence.id,
        "text": item.sentence.text,
        "gold": [{"kind": t.kind, "values": list(t.values)} for t in item.gold],
    }


def task_item_from_dict(doc: dict, task: str) -> TaskItem:
    sentence = SourceSentence.from_text(str(doc["id"]), doc["text"])
    gold = tuple(
        TaskTuple(task=task, kind=t["kind"], values=tuple(t["values"]))
        for t in doc.get("gold", [])
    )
    return TaskItem(sentence=sentence, gold=gold)


def write_task_items(path: str | Path, items: Iterable[TaskItem]) -> int:
    path = Path(path)
    n = 0
    with path.open("w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(task_item_to_dict(item), ensure_ascii=False) + "\n")
            n += 1
    return n


def read_task_items(path: str | Path, task: str) -> list[TaskItem]:
    path = Path(path)
    items = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                items.append(task_item_from_dict(json.loads(line), task))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: malformed task item: {exc}") from exc
    return items
