"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines alongside pytest's own verdicts.
"""

from __future__ import annotations

import json
import math
import random
import string
import time
from pathlib import Path

import pytest

from spandistill.codec import (
    ScoredSpan,
    align_tags,
    decode_spans,
    encode_query,
    resolve_conflicts,
)
from spandistill.evaluate import micro_f1
from spandistill.formats import (
    convert_causal,
    convert_seq2seq,
    distill_to_training,
    parse_causal,
    parse_seq2seq,
)
from spandistill.llm import MockLLMClient
from spandistill.records import SourceSentence
from spandistill.synth import parse_llm_response, synthesize
from spandistill.tagger import HashedWindowTagger, TrainConfig, fit_tagger
from spandistill.tasks import (
    AbsaSchema,
    AsteSchema,
    EeSchema,
    FewShotSpec,
    NerSchema,
    ReSchema,
    SrlSchema,
    TaskItem,
    TaskTuple,
    fewshot_sample,
    to_training_examples,
    training_queries,
    write_task_items,
)
from spandistill.evaluate import evaluate_run

from conftest import (
    GAZETTEER,
    decode_and_assemble,
    make_distill_corpus,
    make_ner_items,
)

DATA_DIR = Path(__file__).parent / "data"


def random_sentence(rng: random.Random, max_tokens: int = 30) -> SourceSentence:
    n = rng.randint(1, max_tokens)
    tokens = tuple(
        "".join(rng.choices(string.ascii_lowercase, k=rng.randint(1, 8))) for _ in range(n)
    )
    return SourceSentence(id="s", text=" ".join(tokens), tokens=tokens)


def random_span_set(rng: random.Random, n: int) -> list[tuple[int, int]]:
    spans = []
    pos = 0
    while pos < n:
        if rng.random() < 0.45:
            end = min(n, pos + rng.randint(1, 4))
            spans.append((pos, end))
            pos = end + rng.randint(0, 2)
        else:
            pos += 1
    return spans


def test_acceptance_1_codec_round_trip():
    rng = random.Random(1)
    start = time.perf_counter()
    for _ in range(1000):
        sentence = random_sentence(rng)
        spans = random_span_set(rng, len(sentence))
        label = "".join(rng.choices(string.ascii_letters, k=rng.randint(1, 10)))
        example = align_tags(encode_query(label, sentence), spans)
        assert decode_spans(example.tags) == spans
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0
    print(f"\nACCEPTANCE 1 PASS: codec round-trip 1000/1000 in {elapsed:.2f}s")


def _peel_oracle(candidates):
    remaining = list(candidates)
    kept = []
    while remaining:
        best = min(remaining, key=lambda s: (-s.score, s.start, s.end - s.start, s.label))
        kept.append(best)
        remaining = [s for s in remaining if not s.overlaps(best)]
    return kept


def _nonoverlapping_subsets(candidates):
    subsets = [[]]
    for candidate in candidates:
        subsets += [
            chosen + [candidate]
            for chosen in subsets
            if all(not candidate.overlaps(s) for s in chosen)
        ]
    return subsets


def test_acceptance_2_conflict_resolution_oracle():
    rng = random.Random(2)
    start = time.perf_counter()
    for _ in range(500):
        spans = []
        for index in range(rng.randint(0, 8)):
            s = rng.randint(0, 14)
            spans.append(
                ScoredSpan(
                    label=f"L{index}",
                    start=s,
                    end=s + rng.randint(1, 4),
                    score=rng.uniform(-10, 0),
                )
            )
        kept = resolve_conflicts(spans)
        for i, a in enumerate(kept):
            for b in kept[i + 1 :]:
                assert not a.overlaps(b)
        if spans:
            best = min(spans, key=lambda s: (-s.score, s.start, s.end - s.start, s.label))
            assert best in kept
        assert kept == _peel_oracle(spans)
        assert any(set(kept) == set(subset) for subset in _nonoverlapping_subsets(spans))
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0
    print(f"\nACCEPTANCE 2 PASS: conflict resolution matches brute force 500/500 in {elapsed:.2f}s")


def _brute_counts(preds, golds):
    remaining = list(golds)
    tp = 0
    for pred in preds:
        for index, gold in enumerate(remaining):
            if pred == gold:
                tp += 1
                del remaining[index]
                break
    return tp, len(preds) - tp, len(golds) - tp


def test_acceptance_3_micro_f1_oracle():
    rng = random.Random(3)
    kinds = [("entity", 2), ("relation", 3), ("term", 2), ("trigger", 2)]
    start = time.perf_counter()
    for _ in range(500):
        def draw(n):
            out = []
            for _ in range(n):
                kind, arity = rng.choice(kinds)
                out.append(
                    TaskTuple("X", kind, tuple(rng.choice("abcd") for _ in range(arity)))
                )
            return out

        preds = draw(rng.randint(0, 30))
        golds = draw(rng.randint(0, 30))
        report = micro_f1(preds, golds)
        tp, fp, fn = _brute_counts(
            [(t.kind,) + t.values for t in preds], [(t.kind,) + t.values for t in golds]
        )
        assert (report.overall.tp, report.overall.fp, report.overall.fn) == (tp, fp, fn)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        assert abs(report.precision - precision) <= 1e-12
        assert abs(report.recall - recall) <= 1e-12
        assert abs(report.f1 - f1) <= 1e-12
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0
    print(f"\nACCEPTANCE 3 PASS: micro-F1 matches brute-force counter 500/500 in {elapsed:.2f}s")


HOMETOWN = "John Smith loves his hometown , Los Angeles"

WORKED_CASES = [
    (
        NerSchema(["Person"]),
        [TaskTuple("NER", "entity", ("Person", "John Smith"))],
        {"Person": "B I O O O O O O"},
    ),
    (
        ReSchema(["Person"], ["births in"]),
        [
            TaskTuple("RE", "entity", ("Person", "John Smith")),
            TaskTuple("RE", "relation", ("John Smith", "births in", "Los Angeles")),
        ],
        {
            "Person": "B I O O O O O O",
            "John Smith births in": "O O O O O O B I",
        },
    ),
    (
        EeSchema(),
        [
            TaskTuple("EE", "trigger", ("Trigger", "loves")),
            TaskTuple("EE", "argument", ("Trigger", "loves", "Los Angeles")),
        ],
        {
            "Trigger": "O O B O O O O O",
            "Argument for Trigger 'loves'": "O O O O O O B I",
        },
    ),
    (
        SrlSchema(["A0", "A1"]),
        [TaskTuple("SRL", "role", ("loves", "A1", "hometown"))],
        {
            "Verb": "O O B O O O O O",
            "A1 Argument for Verb 'loves'": "O O O O B O O O",
        },
    ),
    (
        AbsaSchema(),
        [TaskTuple("ABSA", "term", ("Positive", "Los Angeles"))],
        {"Positive Term": "O O O O O O B I"},
    ),
    (
        AsteSchema(),
        [TaskTuple("ASTE", "triple", ("Los Angeles", "loves", "Positive"))],
        {
            "Positive Opinion": "O O B O O O O O",
            "Aspect for Opinion 'loves'": "O O O O O O B I",
        },
    ),
]


def test_acceptance_4_worked_example_fidelity():
    sentence = SourceSentence.from_text("s-hometown", HOMETOWN)
    checked = 0
    for schema, gold, expected_tags in WORKED_CASES:
        item = TaskItem(sentence=sentence, gold=tuple(gold))
        produced = {
            query.label: " ".join(example.tags)
            for query, example in training_queries(schema, item)
        }
        for label, tags in expected_tags.items():
            assert produced[label] == tags, (schema.task, label)
            checked += 1
        assert set(decode_and_assemble(schema, item)) == set(gold), schema.task
    print(f"\nACCEPTANCE 4 PASS: {checked} worked encodings round-trip across 6 tasks")


def _simple_items(task, kind, label_values, n, id_prefix):
    """Items whose gold tuples carry the given label in the right slot."""
    items = []
    for index in range(n):
        label = label_values[index % len(label_values)]
        if kind == "relation":
            gold = (
                TaskTuple(task, "entity", ("Person", "Ann Lee")),
                TaskTuple(task, "relation", ("Ann Lee", label, "Rome")),
            )
            text = f"Ann Lee {label} Rome ."
        elif kind == "term":
            gold = (TaskTuple(task, "term", (label, "salad")),)
            text = "The salad was notable ."
        elif kind == "triple":
            gold = (TaskTuple(task, "triple", ("salad", "fresh", label)),)
            text = "The salad was fresh ."
        elif kind == "trigger":
            gold = (TaskTuple(task, "trigger", ("Trigger", "spoke")),)
            text = "Someone spoke today ."
        else:  # role
            gold = (TaskTuple(task, "role", ("spoke", label, "today")),)
            text = "Someone spoke today ."
        sentence = SourceSentence.from_text(f"{id_prefix}-{index:04d}", text)
        items.append(TaskItem(sentence=sentence, gold=gold))
    return items


def test_acceptance_5_fewshot_protocol(tmp_path):
    # NER / RE / ABSA / ASTE: per-label 5-shot coverage
    per_label_cases = [
        ("NER", NerSchema(["Person", "Location", "Animal"]), make_ner_items(120, seed=5)),
        (
            "RE",
            ReSchema(["Person"], ["works for", "lives in"]),
            _simple_items("RE", "relation", ["works for", "lives in"], 80, "re"),
        ),
        (
            "ABSA",
            AbsaSchema(),
            _simple_items("ABSA", "term", ["Positive", "Negative", "Neutral"], 90, "absa"),
        ),
        (
            "ASTE",
            AsteSchema(),
            _simple_items("ASTE", "triple", ["Positive", "Negative", "Neutral"], 90, "aste"),
        ),
    ]
    for name, schema, items in per_label_cases:
        sample = fewshot_sample(items, FewShotSpec.per_label(5, seed=7), schema)
        labels = sorted({l for item in items for l in schema.fewshot_labels(item)})
        for label in labels:
            available = [i for i in items if label in schema.fewshot_labels(i)]
            covering = [i for i in sample.items if label in schema.fewshot_labels(i)]
            assert len(covering) >= min(5, len(available)), (name, label)
        assert len({i.id for i in sample.items}) == len(sample.items), name

    # EE: 5% cardinality, ceil
    ee_items = _simple_items("EE", "trigger", ["Trigger"], 200, "ee")
    ee_sample = fewshot_sample(ee_items, FewShotSpec.of_fraction(0.05, seed=7), EeSchema())
    assert len(ee_sample.items) == math.ceil(0.05 * 200) == 10

    # SRL: exactly 50
    srl_items = _simple_items("SRL", "role", ["A0", "A1"], 120, "srl")
    srl_sample = fewshot_sample(srl_items, FewShotSpec.absolute(50, seed=7), SrlSchema(["A0", "A1"]))
    assert len(srl_sample.items) == 50

    # determinism: two same-seed runs are byte-identical on disk
    items = make_ner_items(100, seed=6)
    schema = NerSchema(["Person", "Location", "Animal"])
    paths = []
    for run in (1, 2):
        sample = fewshot_sample(items, FewShotSpec.per_label(5, seed=13), schema)
        path = tmp_path / f"subset{run}.jsonl"
        write_task_items(path, sample.items)
        paths.append(path)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    print("\nACCEPTANCE 5 PASS: few-shot rules exact for all 6 tasks, same-seed runs byte-identical")


def test_acceptance_6_parser_fixtures():
    cases = json.loads((DATA_DIR / "llm_responses.json").read_text("utf-8"))
    assert len(cases) == 50
    sentence = SourceSentence.from_text("s", "placeholder text")
    for case in cases:
        try:
            parsed = parse_llm_response(sentence, case["response"])
        except Exception as exc:  # pragma: no cover - the assertion is the point
            raise AssertionError(f"case {case['name']} raised {exc!r}") from exc
        got = [[p.label, p.span_text] for p in parsed.pairs]
        assert got == case["expected"], case["name"]
        if "ignored" in case:
            assert parsed.ignored_lines == case["ignored"], case["name"]
    print(f"\nACCEPTANCE 6 PASS: {len(cases)} parser fixtures, no exceptions, exact pairs")


def test_acceptance_7_distillation_improves_few_shot_transfer():
    start = time.perf_counter()
    schema = NerSchema(["Person", "Location", "Animal"])
    corpus = make_distill_corpus(3000, seed=100)
    result = synthesize(
        corpus, MockLLMClient(gazetteer=GAZETTEER), n=1000, sleep=lambda _: None
    )
    assert len(result.records) >= 1000

    gaps = []
    scores = []
    for seed in range(5):
        distill_examples = distill_to_training(result.records, negatives_per_record=1, seed=seed)
        pretrained = HashedWindowTagger().fit(
            distill_examples, TrainConfig(learning_rate=0.1, epochs=2, seed=seed)
        )
        train_items = make_ner_items(60, seed=200 + seed, id_prefix="train")
        test_items = make_ner_items(60, seed=300 + seed, id_prefix="test")
        shots = fewshot_sample(train_items, FewShotSpec.per_label(5, seed=seed), schema).items
        shot_examples = to_training_examples(schema, shots)
        finetune = TrainConfig(learning_rate=0.1, epochs=8, seed=seed)

        warm = pretrained.copy()
        warm.set_params(warm_start=True)
        warm.fit(shot_examples, finetune)
        scratch = HashedWindowTagger().fit(shot_examples, finetune)

        f1_pre = evaluate_run(schema, warm, test_items).f1
        f1_scratch = evaluate_run(schema, scratch, test_items).f1
        gaps.append(f1_pre - f1_scratch)
        scores.append((f1_pre, f1_scratch))

    mean_gap = sum(gaps) / len(gaps)
    elapsed = time.perf_counter() - start
    assert mean_gap > 0.05, scores
    assert elapsed < 300.0
    print(
        f"\nACCEPTANCE 7 PASS: distilled start beats scratch by {mean_gap:+.3f} F1 "
        f"(mean of 5 seeds; {elapsed:.1f}s)"
    )


def test_acceptance_8_training_protocol_conformance():
    items = make_ner_items(50, seed=8)
    schema = NerSchema(["Person", "Location", "Animal"])
    examples = to_training_examples(schema, items)
    config = TrainConfig()
    assert config.batch_size == 64 and config.epochs == 1
    assert config.learning_rate == pytest.approx(2e-5)
    _, log = fit_tagger(HashedWindowTagger(), examples, config)
    assert log.batch_size == 64
    assert log.epochs_run == 1
    assert len(log.entries) == math.ceil(len(examples) / 64)
    print(
        f"\nACCEPTANCE 8 PASS: defaults run 1 epoch at batch 64; "
        f"{len(log.entries)} batches == ceil({len(examples)}/64)"
    )


def test_acceptance_9_converter_round_trip():
    rng = random.Random(9)
    vocabulary = ["alpha", "beta", "Gamma", "delta", "42", "omega", "kappa"]
    labels = ["Person", "Time period", "Cause of death", "Topic"]
    for _ in range(1000):
        n = rng.randint(1, 12)
        tokens = tuple(rng.choice(vocabulary) for _ in range(n))
        sentence = SourceSentence(id="s", text=" ".join(tokens), tokens=tokens)
        spans = random_span_set(rng, n)
        label = rng.choice(labels)
        example = align_tags(encode_query(label, sentence), spans)
        expected = [" ".join(tokens[i:j]) for i, j in spans]
        assert parse_seq2seq(*convert_seq2seq(example)) == (label, expected)
        assert parse_causal(convert_causal(example).text) == (label, expected)
    print("\nACCEPTANCE 9 PASS: seq2seq and causal converters invert exactly on 1000 examples")
