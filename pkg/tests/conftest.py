import json
from pathlib import Path

import pytest

from iclsel.corpus import Example, TaskTemplate


@pytest.fixture
def sst2_template() -> TaskTemplate:
    from iclsel.corpus import load_template

    return load_template("sst2")


def write_jsonl(path: Path, records: list[dict]) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def make_sentiment_files(tmp_path: Path, train: list[tuple[str, str, str]],
                         test: list[tuple[str, str, str | None]]) -> Path:
    """Write an SST-2-style dataset; entries are (id, sentence, label).
    Returns the descriptor path."""
    write_jsonl(tmp_path / "train.jsonl",
                [{"id": i, "fields": {"sentence": s}, "label": y} for i, s, y in train])
    write_jsonl(tmp_path / "test.jsonl",
                [{"id": i, "fields": {"sentence": s}, "label": y} for i, s, y in test])
    descriptor = {
        "name": "toy-sentiment",
        "task_kind": "classification",
        "template": "sst2",
        "labels": ["positive", "negative"],
        "splits": {"train": "train.jsonl", "test": "test.jsonl"},
    }
    desc_path = tmp_path / "descriptor.json"
    desc_path.write_text(json.dumps(descriptor), encoding="utf-8")
    return desc_path


def example(id: str, text: str = "x", label: str | None = None) -> Example:
    return Example(id=id, fields={"sentence": text}, label=label)
