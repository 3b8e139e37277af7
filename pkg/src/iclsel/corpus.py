"""Task corpora: datasets, templates, and prompt-text rendering.

Datasets are flat JSONL files described by a small JSON descriptor; templates
are data files that map an example onto demonstration text, query text, and a
verbalized answer. Rendering is pure string work; tokenization is the
scoring backend's concern, never handled here.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from .errors import DatasetError, TemplateError

_PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


def substitute(pattern: str, values: Mapping[str, str], *, where: str = "pattern") -> str:
    """Fill ``{name}`` placeholders from ``values``.

    Single pass over the pattern: inserted text is never rescanned, so field
    values may safely contain braces.
    """
    out = []
    pos = 0
    for m in _PLACEHOLDER.finditer(pattern):
        name = m.group(1)
        if name not in values:
            raise TemplateError(f"missing field {name!r} required by {where}")
        out.append(pattern[pos : m.start()])
        out.append(values[name])
        pos = m.end()
    out.append(pattern[pos:])
    return "".join(out)


def placeholder_names(pattern: str) -> list[str]:
    return [m.group(1) for m in _PLACEHOLDER.finditer(pattern)]


@dataclass(frozen=True)
class Example:
    """One corpus record: named input text fields plus an optional label.

    For classification the label is a key into the template's verbalizer; for
    generation it is the target text itself.
    """

    id: str
    fields: dict[str, str]
    label: str | None = None


@dataclass(frozen=True)
class TaskTemplate:
    """Rendering rules for one task.

    ``demo_pattern`` renders input and answer; ``query_pattern`` renders the
    input only, up to the answer slot. Rendering a labeled example through
    ``demo_pattern`` must yield the query context followed by the verbalized
    answer (checked at render time), so conditional log-probabilities of
    answers are well defined. Answer continuations carry their own leading
    whitespace (" positive", not "positive") because conditional scoring is
    whitespace-sensitive.
    """

    name: str
    demo_pattern: str
    query_pattern: str
    verbalizer: dict[str, str] | None = None
    demo_separator: str = "\n"

    @property
    def is_classification(self) -> bool:
        return self.verbalizer is not None


def _answer_text(template: TaskTemplate, ex: Example) -> str:
    if ex.label is None:
        raise TemplateError(f"example {ex.id!r} has no label to render an answer from")
    if template.verbalizer is not None:
        if ex.label not in template.verbalizer:
            raise TemplateError(
                f"label {ex.label!r} of example {ex.id!r} has no verbalizer entry "
                f"in template {template.name!r}"
            )
        raw = template.verbalizer[ex.label]
    else:
        raw = ex.label
    # multi-choice verbalizers reference example fields (answer option text)
    return substitute(raw, ex.fields, where=f"answer for label {ex.label!r}")


def render_demo(template: TaskTemplate, ex: Example) -> str:
    """Render a labeled example as demonstration text (input and answer)."""
    values = dict(ex.fields)
    values["answer"] = _answer_text(template, ex)
    return substitute(template.demo_pattern, values, where=f"template {template.name!r}")


def render_query(template: TaskTemplate, ex: Example) -> tuple[str, str]:
    """Render an example as (context_text, answer_text).

    The context is the query pattern filled with the example's fields; the
    answer is whatever the demo rendering appends after it (empty for
    unlabeled examples). context + answer always equals render_demo output.
    """
    context = substitute(template.query_pattern, ex.fields, where=f"template {template.name!r}")
    if ex.label is None:
        return context, ""
    demo = render_demo(template, ex)
    if not demo.startswith(context):
        raise TemplateError(
            f"template {template.name!r}: demo pattern does not extend the query "
            f"pattern for example {ex.id!r}"
        )
    return context, demo[len(context) :]


def verbalizations(template: TaskTemplate) -> list[tuple[str, str]]:
    """All (label, answer-continuation) entries, in declaration order."""
    if template.verbalizer is None:
        raise TemplateError(f"template {template.name!r} is a generation template; it has no verbalizer")
    return list(template.verbalizer.items())


def verbalizations_for(template: TaskTemplate, ex: Example) -> list[tuple[str, str]]:
    """Verbalizer entries with any field placeholders filled from ``ex``."""
    return [
        (label, substitute(text, ex.fields, where=f"answer for label {label!r}"))
        for label, text in verbalizations(template)
    ]


def example_text(ex: Example) -> str:
    """Bare input text used for retrieval similarity (fields joined, no template)."""
    return " ".join(ex.fields.values())


# --------------------------------------------------------------------------
# datasets
# --------------------------------------------------------------------------

_TASK_KINDS = ("classification", "generation")


@dataclass(frozen=True)
class Dataset:
    name: str
    task_kind: str
    train: list[Example]
    test: list[Example]
    template: TaskTemplate
    labels: list[str] = field(default_factory=list)
    default_n_shot: int | None = None
    max_gen_tokens: int | None = None

    @cached_property
    def train_index(self) -> dict[str, Example]:
        return {ex.id: ex for ex in self.train}


def read_examples(path: str | Path) -> list[Example]:
    """Load a JSONL split; errors report the offending line number."""
    examples, _ = read_examples_with_lines(path)
    return examples


def read_examples_with_lines(path: str | Path) -> tuple[list[Example], dict[str, int]]:
    """Like :func:`read_examples`, but also maps each id to its line number
    so later validation errors can point back into the file."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"dataset file not found: {path}")
    out: list[Example] = []
    lines: dict[str, int] = {}
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(f"{path}:{lineno}: invalid JSON ({e.msg})") from e
            if not isinstance(rec, dict) or "id" not in rec or "fields" not in rec:
                raise DatasetError(f"{path}:{lineno}: record must be an object with 'id' and 'fields'")
            ex_id = rec["id"]
            fields = rec["fields"]
            if not isinstance(ex_id, str) or not isinstance(fields, dict):
                raise DatasetError(f"{path}:{lineno}: 'id' must be a string and 'fields' an object")
            if any(not isinstance(k, str) or not isinstance(v, str) for k, v in fields.items()):
                raise DatasetError(f"{path}:{lineno}: all field names and values must be strings")
            label = rec.get("label")
            if label is not None and not isinstance(label, str):
                raise DatasetError(f"{path}:{lineno}: 'label' must be a string or null")
            if ex_id in seen:
                raise DatasetError(f"{path}:{lineno}: duplicate id {ex_id!r}")
            seen.add(ex_id)
            lines[ex_id] = lineno
            out.append(Example(id=ex_id, fields=dict(fields), label=label))
    return out, lines


def write_examples(path: str | Path, examples: Iterable[Example]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(
                json.dumps({"id": ex.id, "fields": ex.fields, "label": ex.label}, ensure_ascii=False)
            )
            fh.write("\n")


def template_from_dict(name: str, spec: dict) -> TaskTemplate:
    for key in ("demo_pattern", "query_pattern"):
        if key not in spec or not isinstance(spec[key], str):
            raise TemplateError(f"template {name!r}: missing or non-string {key!r}")
    verbalizer = spec.get("verbalizer")
    if verbalizer is not None and (
        not isinstance(verbalizer, dict)
        or any(not isinstance(k, str) or not isinstance(v, str) for k, v in verbalizer.items())
    ):
        raise TemplateError(f"template {name!r}: verbalizer must map strings to strings")
    return TaskTemplate(
        name=name,
        demo_pattern=spec["demo_pattern"],
        query_pattern=spec["query_pattern"],
        verbalizer=verbalizer,
        demo_separator=spec.get("demo_separator", "\n"),
    )


def builtin_template_names() -> list[str]:
    pkg = resources.files("iclsel.templates")
    return sorted(p.name[: -len(".json")] for p in pkg.iterdir() if p.name.endswith(".json"))


def load_template(name_or_path: str, base_dir: str | Path | None = None) -> TaskTemplate:
    """Resolve a template by built-in name, or by file path (absolute or
    relative to ``base_dir``)."""
    pkg = resources.files("iclsel.templates")
    builtin = pkg / f"{name_or_path}.json"
    if re.fullmatch(r"[A-Za-z0-9_\-]+", name_or_path) and builtin.is_file():
        spec = json.loads(builtin.read_text(encoding="utf-8"))
        return template_from_dict(name_or_path, spec)
    path = Path(name_or_path)
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path
    if not path.is_file():
        raise TemplateError(
            f"unknown template {name_or_path!r}: not a built-in "
            f"({', '.join(builtin_template_names())}) and not a file"
        )
    spec = json.loads(path.read_text(encoding="utf-8"))
    return template_from_dict(path.stem, spec)


def _validate_split(where: str, examples: list[Example], lines: dict[str, int],
                    template: TaskTemplate, labels: list[str], task_kind: str) -> None:
    demo_fields = [n for n in placeholder_names(template.demo_pattern) if n != "answer"]
    query_fields = placeholder_names(template.query_pattern)
    required = list(dict.fromkeys(demo_fields + query_fields))
    for ex in examples:
        at = f"{where}:{lines.get(ex.id, '?')}"
        for name in required:
            if name not in ex.fields:
                raise DatasetError(
                    f"{at}: example {ex.id!r} is missing field {name!r} "
                    f"required by template {template.name!r}"
                )
        if task_kind == "classification" and ex.label is not None and ex.label not in labels:
            raise DatasetError(
                f"{at}: example {ex.id!r} has label {ex.label!r} "
                f"outside the declared label space {labels}"
            )


def dataset_from_descriptor(desc: dict, base_dir: str | Path) -> Dataset:
    """Assemble and validate a Dataset from a parsed descriptor."""
    base_dir = Path(base_dir)
    for key in ("name", "task_kind", "template", "splits"):
        if key not in desc:
            raise DatasetError(f"descriptor is missing {key!r}")
    task_kind = desc["task_kind"]
    if task_kind not in _TASK_KINDS:
        raise DatasetError(f"task_kind must be one of {_TASK_KINDS}, got {task_kind!r}")
    labels = desc.get("labels") or []
    template = load_template(desc["template"], base_dir)

    if task_kind == "classification":
        if not labels:
            raise DatasetError("classification dataset must declare a non-empty label space")
        if template.verbalizer is None:
            raise DatasetError(f"classification dataset needs a classification template, got {template.name!r}")
        if set(template.verbalizer) != set(labels):
            raise DatasetError(
                f"verbalizer keys {sorted(template.verbalizer)} do not exactly cover "
                f"the label space {sorted(labels)}"
            )

    splits = desc["splits"]
    if "train" not in splits or "test" not in splits:
        raise DatasetError("descriptor 'splits' must name 'train' and 'test' files")
    train_path = base_dir / splits["train"]
    test_path = base_dir / splits["test"]
    train, train_lines = read_examples_with_lines(train_path)
    test, test_lines = read_examples_with_lines(test_path)
    overlap = {ex.id for ex in train} & {ex.id for ex in test}
    if overlap:
        raise DatasetError(f"train and test share ids: {sorted(overlap)[:5]}")
    _validate_split(str(train_path), train, train_lines, template, labels, task_kind)
    _validate_split(str(test_path), test, test_lines, template, labels, task_kind)

    return Dataset(
        name=desc["name"],
        task_kind=task_kind,
        train=train,
        test=test,
        template=template,
        labels=list(labels),
        default_n_shot=desc.get("default_n_shot"),
        max_gen_tokens=desc.get("max_gen_tokens"),
    )


def load_dataset(descriptor_path: str | Path) -> Dataset:
    """Load a dataset from its JSON descriptor; split paths resolve relative
    to the descriptor's directory. Loading is deterministic and preserves
    file order."""
    descriptor_path = Path(descriptor_path)
    if not descriptor_path.is_file():
        raise DatasetError(f"descriptor not found: {descriptor_path}")
    try:
        desc = json.loads(descriptor_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DatasetError(f"{descriptor_path}: invalid JSON ({e.msg})") from e
    return dataset_from_descriptor(desc, descriptor_path.parent)
