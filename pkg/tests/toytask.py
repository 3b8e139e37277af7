"""Synthetic classification task where label-informative demonstrations exist
by construction.

The backend is the context-reweighted unigram model, so a demonstration's
verbalized answer token ("positive"/"negative") measurably raises the
probability of that label continuation later in the prompt. Training
examples sit in (concept, salt) cells of identical input text; the
lexicographically first member of each cell is always correctly labeled,
while a fixed fraction of the remaining members carry the flipped label.
Retrieval therefore surfaces a clean nearest neighbour as the validation
example, validation loss separates clean from flipped candidates, and a
uniform-random selector keeps drawing from a label-balanced pool, which is
exactly the accuracy gap the end-to-end checks look for.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from iclsel.backends import ContextUnigramBackend
from iclsel.corpus import Dataset, Example, TaskTemplate

TEMPLATE = TaskTemplate(
    name="toy-topic",
    demo_pattern="input {text} label{answer}",
    query_pattern="input {text} label",
    verbalizer={"pos": " positive", "neg": " negative"},
    demo_separator="\n",
)

_CONCEPT_WORDS = {
    "pos": ["amber", "birch", "cedar"],
    "neg": ["quartz", "raven", "slate"],
}
_SALTS = [f"salt{i}" for i in range(10)]


def build_vocab() -> dict[str, float]:
    tokens = ["input", "label", "positive", "negative", *_SALTS,
              *_CONCEPT_WORDS["pos"], *_CONCEPT_WORDS["neg"]]
    p = 1.0 / len(tokens)
    vocab = {tok: p for tok in tokens}
    # nudge the last entry so the probabilities sum to 1.0 exactly enough
    vocab[tokens[-1]] = 1.0 - p * (len(tokens) - 1)
    return vocab


def make_backend(boost: float = 2.0) -> ContextUnigramBackend:
    return ContextUnigramBackend(build_vocab(), boost=boost, name="toy-topic-lm")


@dataclass
class ToyTask:
    dataset: Dataset
    backend: ContextUnigramBackend


def _cell_text(concept: str, salt: str) -> str:
    return " ".join([*_CONCEPT_WORDS[concept], salt])


def build_toy_task(members_per_cell: int = 10, tests_per_cell: int = 5,
                   flip_fraction: float = 0.4, seed: int = 7) -> ToyTask:
    """200 train examples (2 concepts x 10 salts x 10 members) and 100 test
    instances by default."""
    rng = random.Random(seed)
    flipped = {"pos": "neg", "neg": "pos"}
    train: list[Example] = []
    for concept in ("pos", "neg"):
        for salt in _SALTS:
            text = _cell_text(concept, salt)
            for member in range(members_per_cell):
                label = concept
                # the cell head (member 0) is always clean; later members may flip
                if member > 0 and rng.random() < flip_fraction:
                    label = flipped[concept]
                train.append(Example(
                    id=f"tr-{concept}-{salt}-{member:02d}",
                    fields={"text": text},
                    label=label,
                ))
    test: list[Example] = []
    for concept in ("pos", "neg"):
        for salt in _SALTS:
            for rep in range(tests_per_cell):
                test.append(Example(
                    id=f"te-{concept}-{salt}-{rep}",
                    fields={"text": _cell_text(concept, salt)},
                    label=concept,
                ))
    dataset = Dataset(
        name="toy-topic",
        task_kind="classification",
        train=train,
        test=test,
        template=TEMPLATE,
        labels=["pos", "neg"],
    )
    return ToyTask(dataset=dataset, backend=make_backend())
