"""Shared fixtures: a small synthetic world for offline pipeline tests.

The world has a filler vocabulary (people, cities, animals), template
sentences built from it, and a gazetteer the mock LLM client uses to
annotate them, so synthesize/train/evaluate runs are fully deterministic.
"""

from __future__ import annotations

import random

import pytest

from spandistill.llm import MockLLMClient
from spandistill.records import SourceSentence
from spandistill.tasks import TaskItem, TaskTuple

PEOPLE = [
    "Alice Carter", "Bob Hale", "Carol Jensen", "David Orr", "Emma Stone",
    "Frank Lloyd", "Grace Kim", "Henry Adams", "Irene Pavel", "Jack Monroe",
    "Karen Voss", "Liam Turner", "Mona Reyes", "Noah Fields", "Olga Brandt",
    "Peter Quinn", "Rosa Diaz", "Sam Porter", "Tina Brooks", "Victor Hugo",
]
CITIES = [
    "Lisbon", "Oslo", "Prague", "Madrid", "Vienna", "Dublin", "Athens",
    "Cairo", "Tokyo", "Lima", "Quito", "Havana", "Warsaw", "Seoul", "Nairobi",
]
ANIMALS = [
    "heron", "badger", "lynx", "otter", "falcon",
    "marmot", "bison", "weasel", "stork", "viper",
]

GAZETTEER = {"Person": PEOPLE, "Location": CITIES, "Animal": ANIMALS}

DISTILL_TEMPLATES = [
    "{person} visited {city} last spring. It was sunny there.",
    "{person} moved from {city} to {city2} in 2019. Friends were surprised.",
    "A wild {animal} was seen near {city}. Locals took photos.",
    "{person} photographed a {animal} at dawn. The light was perfect.",
    "The mayor of {city} praised {person}. The speech was short.",
]

TASK_TEMPLATES = [
    "{person} will travel to {city} tomorrow.",
    "Researchers spotted a {animal} outside {city}.",
    "{city} welcomed {person} warmly.",
]


def make_distill_corpus(n: int, seed: int) -> list[str]:
    """Paragraphs whose first sentences mention gazetteer fillers."""
    rng = random.Random(seed)
    paragraphs = []
    for _ in range(n):
        template = rng.choice(DISTILL_TEMPLATES)
        city, city2 = rng.sample(CITIES, 2)
        paragraphs.append(
            template.format(
                person=rng.choice(PEOPLE),
                city=city,
                city2=city2,
                animal=rng.choice(ANIMALS),
            )
        )
    return paragraphs


def make_ner_items(
    n: int,
    seed: int,
    people: list[str] | None = None,
    cities: list[str] | None = None,
    animals: list[str] | None = None,
    id_prefix: str = "ner",
) -> list[TaskItem]:
    """Synthetic NER items with gold Person/Location/Animal entities."""
    rng = random.Random(seed)
    people = people or PEOPLE
    cities = cities or CITIES
    animals = animals or ANIMALS
    items = []
    for index in range(n):
        template = rng.choice(TASK_TEMPLATES)
        person = rng.choice(people)
        city = rng.choice(cities)
        animal = rng.choice(animals)
        text = template.format(person=person, city=city, animal=animal)
        gold = []
        if "{person}" in template:
            gold.append(TaskTuple("NER", "entity", ("Person", person)))
        if "{city}" in template:
            gold.append(TaskTuple("NER", "entity", ("Location", city)))
        if "{animal}" in template:
            gold.append(TaskTuple("NER", "entity", ("Animal", animal)))
        sentence = SourceSentence.from_text(f"{id_prefix}-{index:04d}", text)
        items.append(TaskItem(sentence=sentence, gold=tuple(gold)))
    return items


def decode_and_assemble(schema, item):
    """Round-trip helper: training encodings -> decoded spans -> task tuples."""
    from spandistill.codec import decode_spans
    from spandistill.tasks import Extraction, assemble, training_queries
    from spandistill.text import detokenize

    per_stage = [[] for _ in schema.stages]
    for query, example in training_queries(schema, item):
        for start, end in decode_spans(example.tags):
            text = detokenize(item.sentence.tokens[start:end])
            bindings = dict(query.bindings)
            bindings[query.answer_role] = text
            per_stage[query.stage].append(
                Extraction(
                    stage=query.stage,
                    label=query.label,
                    start=start,
                    end=end,
                    span_text=text,
                    score=0.0,
                    bindings=tuple(sorted(bindings.items())),
                )
            )
    return assemble(schema, per_stage)


@pytest.fixture
def mock_client() -> MockLLMClient:
    return MockLLMClient(gazetteer=GAZETTEER)


@pytest.fixture
def hometown() -> SourceSentence:
    # The worked example sentence used across the task encodings.
    return SourceSentence.from_text("s-hometown", "John Smith loves his hometown , Los Angeles")
