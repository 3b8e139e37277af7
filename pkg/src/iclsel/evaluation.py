"""Prompt assembly, prediction, metrics, and full experiment runs.

Classification predicts by scoring each verbalized label continuation behind
the assembled prompt and taking the most likely (ties go to declaration
order). Generation decodes greedily and is scored with exact-match / token-F1
per instance plus corpus-level BLEU. Experiment runs are deterministic given
(config, seed, backend): per-instance failures are quarantined and listed,
never fatal to the run.
"""

from __future__ import annotations

import json
import re
import string
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import exp, fsum, log
from typing import Mapping, Sequence

from .backends import LogProbBackend
from .corpus import Dataset, Example, TaskTemplate, render_query, verbalizations_for
from .errors import BackendError, IclSelError, SelectionError
from .retrieval.providers import SimilarityProvider
from .selection import (
    CandidateSet,
    SelectionConfig,
    _rng,
    full_candidate_set,
    make_candidate_set,
    oracle_select,
    select_baseline,
    select_dva,
)

DEFAULT_MAX_GEN_TOKENS = 64


@dataclass(frozen=True)
class Prompt:
    demos: tuple[str, ...]
    query_context: str
    separator: str = "\n"

    @property
    def full_text(self) -> str:
        # no leading separator when there are no demonstrations
        return self.separator.join([*self.demos, self.query_context])


def assemble_prompt(demos: Sequence[str], test: Example, template: TaskTemplate) -> Prompt:
    context, _ = render_query(template, test)
    return Prompt(demos=tuple(demos), query_context=context,
                  separator=template.demo_separator)


def classify(backend: LogProbBackend, prompt: Prompt,
             verbs: Sequence[tuple[str, str]]) -> str:
    """Label whose verbalized continuation is most likely after the prompt
    (raw sums; argmin of negative log-likelihood, ties by declaration order)."""
    if len(verbs) < 2:
        raise SelectionError("classification needs at least 2 verbalized labels")
    nlls = []
    for idx, (label, answer) in enumerate(verbs):
        tlp = backend.conditional_logprob(prompt.full_text, answer)
        nlls.append((-tlp.total, idx, label))
    return min(nlls)[2]


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------

_ARTICLES = re.compile(r"\b(a|an|the)\b")


def normalize_answer(s: str) -> str:
    """Lowercase, drop punctuation and articles, collapse whitespace."""
    s = s.lower()
    s = "".join(ch for ch in s if ch not in string.punctuation)
    s = _ARTICLES.sub(" ", s)
    return " ".join(s.split())


def exact_match(pred: str, gold: str) -> int:
    return int(normalize_answer(pred) == normalize_answer(gold))


def _f1_tokens(s: str) -> list[str]:
    # F1 counts every word, articles included: f1("a b", "b c") must treat
    # "a" as a real token (precision 1/2), unlike exact-match normalization
    s = "".join(ch for ch in s.lower() if ch not in string.punctuation)
    return s.split()


def f1_token(pred: str, gold: str) -> float:
    """Token-multiset F1 over lowercased, punctuation-stripped answers; two
    empty answers agree."""
    pred_toks = _f1_tokens(pred)
    gold_toks = _f1_tokens(gold)
    if not pred_toks or not gold_toks:
        return float(pred_toks == gold_toks)
    common = Counter(pred_toks) & Counter(gold_toks)
    n_same = sum(common.values())
    if n_same == 0:
        return 0.0
    precision = n_same / len(pred_toks)
    recall = n_same / len(gold_toks)
    return 2 * precision * recall / (precision + recall)


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(preds: Sequence[str], golds: Sequence[str]) -> float:
    """Corpus-level BLEU-4 with brevity penalty, whitespace tokens, clipped
    counts and no smoothing, scaled to 0-100. Any order with zero matches
    (or an empty hypothesis corpus) gives 0."""
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions vs {len(golds)} references")
    if not preds:
        raise ValueError("corpus_bleu needs at least one sentence pair")
    hyp_len = 0
    ref_len = 0
    matched = [0] * 4
    total = [0] * 4
    for pred, gold in zip(preds, golds):
        hyp = pred.split()
        ref = gold.split()
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, 5):
            hyp_ngrams = _ngrams(hyp, n)
            ref_ngrams = _ngrams(ref, n)
            matched[n - 1] += sum((hyp_ngrams & ref_ngrams).values())
            total[n - 1] += max(len(hyp) - n + 1, 0)
    if hyp_len == 0 or any(m == 0 for m in matched) or any(t == 0 for t in total):
        return 0.0
    log_precision = fsum(log(m / t) for m, t in zip(matched, total)) / 4.0
    brevity = 1.0 if hyp_len > ref_len else exp(1.0 - ref_len / hyp_len)
    return 100.0 * brevity * exp(log_precision)


# --------------------------------------------------------------------------
# experiment runs
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Prediction:
    test_id: str
    predicted: str
    gold: str | None
    correct: bool | None
    metric_values: dict[str, float] = field(default_factory=dict)


@dataclass
class Report:
    dataset: str
    strategy: str
    config: dict
    predictions: list[Prediction]
    aggregates: dict[str, float]
    failures: list[dict]
    seed: int
    traces: list[dict] = field(default_factory=list)


def _trace_line(test_id: str, cfg: SelectionConfig, validation_id: str | None,
                scored: list[dict], selected_ids: list[str]) -> dict:
    return {
        "test_id": test_id,
        "strategy": cfg.strategy,
        "lambda": cfg.lambda_,
        "validation_id": validation_id,
        "scored": scored,
        "selected": selected_ids,
    }


def select_for_instance(backend: LogProbBackend | None, provider: SimilarityProvider | None,
                        dataset: Dataset, test: Example, cfg: SelectionConfig
                        ) -> tuple[list[str], dict]:
    """Pick and order demonstrations for one test instance; returns the demo
    texts in prompt order plus the trace record."""
    template = dataset.template
    if cfg.n_shot == 0:
        return [], _trace_line(test.id, cfg, None, [], [])

    if cfg.strategy == "random":
        cand_set: CandidateSet = full_candidate_set(dataset.train, template, test)
    else:
        if provider is None:
            raise SelectionError(f"strategy {cfg.strategy!r} needs a retrieval provider")
        cand_set = make_candidate_set(provider, dataset.train_index, template, test, cfg.k)

    if cfg.strategy == "dva":
        sel = select_dva(backend, cand_set, test, cfg, template)
        scored = [
            {"id": sc.candidate.example_id, "l_v": sc.l_v, "epsilon": sc.epsilon,
             "score": sc.score, "retrieval_rank": sc.candidate.retrieval_rank}
            for sc in sel.scored
        ]
        selected_ids = [sc.candidate.example_id for sc in sel.selected]
        trace = _trace_line(test.id, cfg, sel.validation.example_id, scored, selected_ids)
        return [sc.candidate.demo_text for sc in sel.selected], trace

    if cfg.strategy == "oracle":
        ranked = oracle_select(backend, cand_set, test, cfg.n_shot, template,
                               cfg.normalization)
        # ranked is best-first; apply the same prompt-order convention
        if cfg.ordering == "descending":
            ordered = list(reversed(ranked))
        elif cfg.ordering == "ascending":
            ordered = list(ranked)
        else:
            ordered = list(ranked)
            _rng(cfg.seed, test.id, "ordering").shuffle(ordered)
        scored = [
            {"id": sc.candidate.example_id, "l_v": None, "epsilon": None,
             "score": sc.l_t, "retrieval_rank": sc.candidate.retrieval_rank}
            for sc in ranked
        ]
        trace = _trace_line(test.id, cfg, None, scored,
                            [sc.candidate.example_id for sc in ordered])
        return [sc.candidate.demo_text for sc in ordered], trace

    sel = select_baseline(backend, cand_set, test, cfg, template)
    scored = [
        {"id": cand.example_id, "l_v": None, "epsilon": None, "score": score,
         "retrieval_rank": cand.retrieval_rank}
        for cand, score in sel.scored
    ]
    selected_ids = [cand.example_id for cand in sel.selected]
    trace = _trace_line(test.id, cfg, None, scored, selected_ids)
    return [cand.demo_text for cand in sel.selected], trace


def evaluate_instance(backend: LogProbBackend, provider: SimilarityProvider | None,
                      dataset: Dataset, test: Example, cfg: SelectionConfig,
                      max_gen_tokens: int = DEFAULT_MAX_GEN_TOKENS
                      ) -> tuple[Prediction, dict]:
    template = dataset.template
    demos, trace = select_for_instance(backend, provider, dataset, test, cfg)
    prompt = assemble_prompt(demos, test, template)
    if dataset.task_kind == "classification":
        predicted = classify(backend, prompt, verbalizations_for(template, test))
        correct = (predicted == test.label) if test.label is not None else None
        metrics = {"accuracy": float(correct)} if correct is not None else {}
        return Prediction(test.id, predicted, test.label, correct, metrics), trace
    predicted = backend.generate(prompt.full_text, max_gen_tokens,
                                 stop=[template.demo_separator])
    metrics = {}
    if test.label is not None:
        metrics = {
            "em": float(exact_match(predicted, test.label)),
            "f1": f1_token(predicted, test.label),
        }
    return Prediction(test.id, predicted, test.label,
                      bool(metrics["em"]) if metrics else None, metrics), trace


def run_experiment(dataset: Dataset, cfg: SelectionConfig, backend: LogProbBackend,
                   provider: SimilarityProvider | None = None, concurrency: int = 1,
                   max_gen_tokens: int | None = None) -> Report:
    """Evaluate every test instance: retrieve, select, assemble, predict.

    Backend failures on one instance quarantine that instance; aggregates
    cover only the instances that succeeded. Instances are independent, so
    they may run on a small worker pool; results are reduced in input order,
    making the report independent of completion order.
    """
    if max_gen_tokens is None:
        max_gen_tokens = dataset.max_gen_tokens or DEFAULT_MAX_GEN_TOKENS

    def worker(test: Example):
        try:
            return evaluate_instance(backend, provider, dataset, test, cfg, max_gen_tokens)
        except IclSelError as e:
            return ({"test_id": test.id, "error": f"{type(e).__name__}: {e}"}, None)

    if concurrency > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            results = list(pool.map(worker, dataset.test))
    else:
        results = [worker(test) for test in dataset.test]

    predictions: list[Prediction] = []
    failures: list[dict] = []
    traces: list[dict] = []
    for outcome, trace in results:
        if isinstance(outcome, Prediction):
            predictions.append(outcome)
            traces.append(trace)
        else:
            failures.append(outcome)

    aggregates: dict[str, float] = {}
    if predictions:
        keys = sorted({k for p in predictions for k in p.metric_values})
        for key in keys:
            values = [p.metric_values[key] for p in predictions if key in p.metric_values]
            aggregates[key] = fsum(values) / len(values)
        if dataset.task_kind == "generation":
            scored = [p for p in predictions if p.gold is not None]
            if scored:
                aggregates["bleu"] = corpus_bleu([p.predicted for p in scored],
                                                 [p.gold for p in scored])

    config = {
        "dataset": dataset.name,
        "strategy": cfg.strategy,
        "k": cfg.k,
        "n_shot": cfg.n_shot,
        "lambda": cfg.lambda_,
        "ordering": cfg.ordering,
        "validation_policy": cfg.validation_policy,
        "normalization": cfg.normalization,
        "seed": cfg.seed,
        "max_gen_tokens": max_gen_tokens,
    }
    return Report(dataset=dataset.name, strategy=cfg.strategy, config=config,
                  predictions=predictions, aggregates=aggregates, failures=failures,
                  seed=cfg.seed, traces=traces)


def report_to_dict(report: Report) -> dict:
    return {
        "config": report.config,
        "aggregates": report.aggregates,
        "failures": report.failures,
        "per_instance": [
            {"test_id": p.test_id, "predicted": p.predicted, "gold": p.gold,
             "correct": p.correct, "metric_values": p.metric_values}
            for p in report.predictions
        ],
    }


def write_report(report: Report, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_to_dict(report), fh, ensure_ascii=False, indent=2)
        fh.write("\n")


def write_traces(report: Report, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in report.traces:
            fh.write(json.dumps(line, ensure_ascii=False))
            fh.write("\n")
