"""Demonstration selection.

The main strategy holds out the retrieved candidate most similar to the test
input as a query-specific validation example, then scores every remaining
candidate d by how well the model, conditioned on d, (a) reproduces the
validation answer and (b) prefers the test input over the validation input:

    l_v     = -log P(validation answer | d, validation input)
    epsilon = -log( P(test input | d) / P(validation input | d) )
    score   = (1 - lambda) * l_v + lambda * epsilon        (lower is better)

epsilon < 0 means the model already prefers the test input, a good sign, so
it offsets l_v; epsilon > 0 penalizes it. The n best-scoring candidates go
into the prompt, by default worst-first so the best demonstration sits
nearest the query. Candidates are always scored one at a time (a single
demonstration as context), never as partial prompts.

Also provides: the label-aware upper-bound ranking (needs the test label, so
diagnostics only), the random / retrieval-order / input-perplexity baselines,
and the pairwise-preference view of epsilon, which equals a log-odds under a
Bradley-Terry model over the two inputs.
"""

from __future__ import annotations

import hashlib
import logging
import math
import random
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from .backends import LogProbBackend, normalized_total
from .corpus import Example, TaskTemplate, render_demo, render_query
from .errors import ConfigError, SelectionError
from .retrieval.providers import SimilarityProvider, retrieve_top_k

log = logging.getLogger(__name__)

STRATEGIES = ("random", "bm25", "topk", "cone", "dva", "oracle")
ORDERINGS = ("descending", "ascending", "shuffled")
VALIDATION_POLICIES = ("nearest", "random", "furthest")
NORMALIZATIONS = ("sum", "per_token")

# strategies that hold out a validation example from the candidate set
_NEEDS_VALIDATION = ("dva",)
# strategies that never touch the scoring backend during selection
DATA_ONLY_STRATEGIES = ("random", "bm25", "topk")


@dataclass(frozen=True)
class SelectionConfig:
    strategy: str = "dva"
    k: int = 30
    n_shot: int = 8
    lambda_: float = 0.6
    ordering: str = "descending"
    validation_policy: str = "nearest"
    normalization: str = "sum"
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.ordering not in ORDERINGS:
            raise ConfigError(f"unknown ordering {self.ordering!r}")
        if self.validation_policy not in VALIDATION_POLICIES:
            raise ConfigError(f"unknown validation policy {self.validation_policy!r}")
        if self.normalization not in NORMALIZATIONS:
            raise ConfigError(f"unknown normalization {self.normalization!r}")
        if not (0.0 <= self.lambda_ <= 1.0):
            raise ConfigError(f"lambda must be in [0, 1], got {self.lambda_}")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.n_shot < 0:
            raise ConfigError("n_shot must be >= 0")
        if self.strategy in _NEEDS_VALIDATION and self.n_shot > self.k - 1:
            raise ConfigError(
                f"strategy {self.strategy!r} holds out a validation example: "
                f"n_shot ({self.n_shot}) must be <= k - 1 ({self.k - 1})"
            )


@dataclass(frozen=True)
class Candidate:
    example: Example
    demo_text: str
    retrieval_rank: int
    retrieval_similarity: float

    @property
    def example_id(self) -> str:
        return self.example.id


@dataclass(frozen=True)
class CandidateSet:
    test_id: str
    candidates: tuple[Candidate, ...]
    k: int

    def __post_init__(self):
        ranks = [c.retrieval_rank for c in self.candidates]
        if ranks != list(range(len(ranks))):
            raise SelectionError(f"candidate ranks must be contiguous from 0, got {ranks}")

    def __len__(self) -> int:
        return len(self.candidates)


@dataclass(frozen=True)
class ValidationSplit:
    validation: Candidate
    remaining: tuple[Candidate, ...]


@dataclass(frozen=True)
class ScoredCandidate:
    candidate: Candidate
    l_v: float
    epsilon: float
    score: float
    selected_rank: int | None = None


@dataclass(frozen=True)
class OracleScore:
    candidate: Candidate
    l_t: float


@dataclass(frozen=True)
class DvaSelection:
    """Everything a trace needs: the held-out validation candidate, all scored
    candidates in retrieval order, and the selected ones in prompt order."""

    validation: Candidate
    scored: tuple[ScoredCandidate, ...]
    selected: tuple[ScoredCandidate, ...]


@dataclass(frozen=True)
class BaselineSelection:
    selected: tuple[Candidate, ...]
    # populated by the input-perplexity baseline only: (candidate, score) in
    # retrieval order, lower = better
    scored: tuple[tuple[Candidate, float], ...] = ()


def _rng(seed: int, test_id: str, purpose: str) -> random.Random:
    """Deterministic per-instance RNG, stable across platforms and runs."""
    digest = hashlib.sha256(f"{seed}|{test_id}|{purpose}".encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def make_candidate_set(provider: SimilarityProvider, train_by_id: Mapping[str, Example],
                       template: TaskTemplate, test: Example, k: int) -> CandidateSet:
    """Retrieve the top-k training examples for a test input and render them."""
    hits = retrieve_top_k(provider, test, k)
    candidates = tuple(
        Candidate(
            example=train_by_id[hit_id],
            demo_text=render_demo(template, train_by_id[hit_id]),
            retrieval_rank=rank,
            retrieval_similarity=sim,
        )
        for rank, (hit_id, sim) in enumerate(hits)
    )
    return CandidateSet(test_id=test.id, candidates=candidates, k=k)


def full_candidate_set(train: Sequence[Example], template: TaskTemplate,
                       test: Example) -> CandidateSet:
    """Every training example as a candidate (id order, zero similarity):
    what the uniform-random baseline draws from."""
    pool = sorted((ex for ex in train if ex.id != test.id), key=lambda ex: ex.id)
    candidates = tuple(
        Candidate(example=ex, demo_text=render_demo(template, ex),
                  retrieval_rank=rank, retrieval_similarity=0.0)
        for rank, ex in enumerate(pool)
    )
    return CandidateSet(test_id=test.id, candidates=candidates, k=len(candidates))


def split_validation(cand_set: CandidateSet, policy: str = "nearest",
                     seed: int = 0) -> ValidationSplit:
    """Hold one candidate out as the validation example.

    nearest keeps the most similar (rank 0), furthest the least similar,
    random a per-instance seeded draw. The remaining candidates keep their
    original order.
    """
    if policy not in VALIDATION_POLICIES:
        raise ConfigError(f"unknown validation policy {policy!r}")
    if len(cand_set) < 2:
        raise SelectionError(
            f"need at least 2 candidates to split a validation example, got {len(cand_set)}"
        )
    if policy == "nearest":
        idx = 0
    elif policy == "furthest":
        idx = len(cand_set) - 1
    else:
        idx = _rng(seed, cand_set.test_id, "validation").randrange(len(cand_set))
    candidates = cand_set.candidates
    return ValidationSplit(
        validation=candidates[idx],
        remaining=candidates[:idx] + candidates[idx + 1 :],
    )


def validation_loss(backend: LogProbBackend, cand: Candidate, validation: Example,
                    template: TaskTemplate, normalization: str = "sum") -> float:
    """-log P(validation answer | candidate demo, validation input)."""
    v_ctx, v_ans = render_query(template, validation)
    if v_ans == "":
        log.warning("validation example %s has an empty answer; loss recorded as 0.0",
                    validation.id)
        return 0.0
    tlp = backend.conditional_logprob(
        cand.demo_text + template.demo_separator + v_ctx, v_ans
    )
    return -normalized_total(tlp, normalization)


def _context_logprob(backend: LogProbBackend, cand: Candidate, ex: Example,
                     template: TaskTemplate, normalization: str) -> float:
    """log P(rendered query context of ex | candidate demo)."""
    ctx, _ = render_query(template, ex)
    tlp = backend.conditional_logprob(cand.demo_text + template.demo_separator, ctx)
    return normalized_total(tlp, normalization)


def calibration_remainder(backend: LogProbBackend, cand: Candidate, test: Example,
                          validation: Example, template: TaskTemplate,
                          normalization: str = "sum") -> float:
    """log P(validation input | d) - log P(test input | d).

    Negative means the model prefers the test input given this demonstration
    (good); positive penalizes the validation loss estimate.
    """
    lp_test = _context_logprob(backend, cand, test, template, normalization)
    lp_val = _context_logprob(backend, cand, validation, template, normalization)
    return lp_val - lp_test


def dva_score(l_v: float, epsilon: float, lambda_: float) -> float:
    """(1 - lambda) * l_v + lambda * epsilon; no clamping."""
    if not (0.0 <= lambda_ <= 1.0):
        raise ConfigError(f"lambda must be in [0, 1], got {lambda_}")
    return (1.0 - lambda_) * l_v + lambda_ * epsilon


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def bt_preference(backend: LogProbBackend, cand: Candidate, test: Example,
                  validation: Example, template: TaskTemplate) -> float:
    """Probability, under a Bradley-Terry pairwise model, that the model
    prefers the test input over the validation input given this candidate:

        p = P(test|d) / (P(test|d) + P(validation|d))

    computed stably in log space. -log(p / (1-p)) recovers the calibration
    remainder. Always uses raw sums (the identity only holds there).
    """
    lp_test = _context_logprob(backend, cand, test, template, "sum")
    lp_val = _context_logprob(backend, cand, validation, template, "sum")
    return _sigmoid(lp_test - lp_val)


def score_candidates(backend: LogProbBackend, split: ValidationSplit, test: Example,
                     template: TaskTemplate, cfg: SelectionConfig
                     ) -> tuple[ScoredCandidate, ...]:
    """Score every remaining candidate against the held-out validation example."""
    validation_ex = split.validation.example
    scored = []
    for cand in split.remaining:
        l_v = validation_loss(backend, cand, validation_ex, template, cfg.normalization)
        eps = calibration_remainder(backend, cand, test, validation_ex, template,
                                    cfg.normalization)
        scored.append(ScoredCandidate(
            candidate=cand, l_v=l_v, epsilon=eps,
            score=dva_score(l_v, eps, cfg.lambda_),
        ))
    return tuple(scored)


def _prompt_order(chosen: list, cfg: SelectionConfig, test_id: str) -> list:
    """chosen arrives best-first (ascending score). descending puts the worst
    selected demonstration first and the best nearest the query."""
    if cfg.ordering == "descending":
        return list(reversed(chosen))
    if cfg.ordering == "ascending":
        return list(chosen)
    shuffled = list(chosen)
    _rng(cfg.seed, test_id, "ordering").shuffle(shuffled)
    return shuffled


def select_dva(backend: LogProbBackend, cand_set: CandidateSet, test: Example,
               cfg: SelectionConfig, template: TaskTemplate) -> DvaSelection:
    """Full pipeline for one test instance: split off the validation example,
    score the rest, keep the n_shot best (lowest score, ties by retrieval
    rank), and order them for the prompt."""
    if len(cand_set) < cfg.n_shot + 1:
        raise SelectionError(
            f"{len(cand_set)} candidates cannot supply a validation example "
            f"plus {cfg.n_shot} demonstrations"
        )
    split = split_validation(cand_set, cfg.validation_policy, cfg.seed)
    scored = score_candidates(backend, split, test, template, cfg)
    by_score = sorted(scored, key=lambda s: (s.score, s.candidate.retrieval_rank))
    chosen = by_score[: cfg.n_shot]
    ordered = _prompt_order(chosen, cfg, cand_set.test_id)
    selected = tuple(
        replace(sc, selected_rank=pos) for pos, sc in enumerate(ordered)
    )
    return DvaSelection(validation=split.validation, scored=scored, selected=selected)


def select_baseline(backend: LogProbBackend | None, cand_set: CandidateSet,
                    test: Example, cfg: SelectionConfig, template: TaskTemplate
                    ) -> BaselineSelection:
    """Baseline strategies.

    random: seeded uniform draw without replacement. bm25/topk: the n most
    similar, prompt-ordered so the most similar sits nearest the query.
    cone: keep the candidates under which the model is least perplexed by the
    test input, worst first.
    """
    if cfg.strategy not in ("random", "bm25", "topk", "cone"):
        raise ConfigError(f"select_baseline cannot run strategy {cfg.strategy!r}")
    n = cfg.n_shot
    if len(cand_set) < n:
        raise SelectionError(f"{len(cand_set)} candidates cannot fill {n} shots")
    candidates = list(cand_set.candidates)

    if cfg.strategy == "random":
        picked = _rng(cfg.seed, cand_set.test_id, "random").sample(candidates, n)
        return BaselineSelection(selected=tuple(picked))

    if cfg.strategy in ("bm25", "topk"):
        # most similar = rank 0; reversed so it ends up adjacent to the query
        picked = candidates[:n]
        return BaselineSelection(selected=tuple(reversed(picked)))

    # cone: -log P(test input | d), smaller is better
    if backend is None:
        raise SelectionError("the cone strategy needs a scoring backend")
    scores = [
        (cand, -_context_logprob(backend, cand, test, template, cfg.normalization))
        for cand in candidates
    ]
    by_score = sorted(scores, key=lambda cs: (cs[1], cs[0].retrieval_rank))
    chosen = [cand for cand, _ in by_score[:n]]
    ordered = _prompt_order(chosen, cfg, cand_set.test_id)
    return BaselineSelection(selected=tuple(ordered), scored=tuple(scores))


def oracle_select(backend: LogProbBackend, cand_set: CandidateSet, test: Example,
                  n: int, template: TaskTemplate, normalization: str = "sum"
                  ) -> list[OracleScore]:
    """Rank candidates by the true test loss -log P(test answer | d, test
    input). Requires the ground-truth label, so this is a diagnostic upper
    bound, never a deployable strategy."""
    if test.label is None:
        raise SelectionError(f"oracle selection needs a labeled test example ({test.id!r})")
    t_ctx, t_ans = render_query(template, test)
    scored = []
    for cand in cand_set.candidates:
        tlp = backend.conditional_logprob(
            cand.demo_text + template.demo_separator + t_ctx, t_ans
        )
        scored.append(OracleScore(candidate=cand, l_t=-normalized_total(tlp, normalization)))
    scored.sort(key=lambda s: (s.l_t, s.candidate.retrieval_rank))
    return scored[:n]
