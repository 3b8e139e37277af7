import itertools
import math
import random

import pytest

from iclsel.backends import ContextUnigramBackend, MockBackend, UnigramBackend
from iclsel.corpus import Example, TaskTemplate, render_demo, render_query
from iclsel.errors import ConfigError, SelectionError
from iclsel.selection import (
    Candidate,
    CandidateSet,
    SelectionConfig,
    bt_preference,
    calibration_remainder,
    dva_score,
    full_candidate_set,
    make_candidate_set,
    oracle_select,
    select_baseline,
    select_dva,
    split_validation,
    validation_loss,
)
from iclsel.retrieval import Bm25Provider, build_bm25

LN2 = math.log(2.0)
LN3 = math.log(3.0)

T = TaskTemplate(
    name="arrow",
    demo_pattern="{x} ->{answer}",
    query_pattern="{x} ->",
    verbalizer={"y": " yes", "n": " no"},
    demo_separator="\n",
)

TEST_EX = Example("t0", {"x": "QT"}, "y")
VAL_EX = Example("v0", {"x": "QV"}, "y")


def _candidate(i: int, rank: int, sim: float, label: str = "y") -> Candidate:
    ex = Example(f"c{i}", {"x": f"D{i}"}, label)
    return Candidate(example=ex, demo_text=render_demo(T, ex),
                     retrieval_rank=rank, retrieval_similarity=sim)


def mock_instance(specs: list[dict], lambda_: float = 0.6, n_shot: int = 2,
                  validation_spec: dict | None = None, **cfg_kw):
    """Build (backend, cand_set, cfg). specs[i] gives candidate i's l_v and the
    two context log-probabilities behind epsilon; candidate 0 is the held-out
    validation example (rank 0)."""
    val_cand = Candidate(example=VAL_EX, demo_text=render_demo(T, VAL_EX),
                         retrieval_rank=0, retrieval_similarity=0.99)
    candidates = [val_cand]
    table: dict[tuple[str, str], list[float]] = {}
    if validation_spec:
        d = val_cand.demo_text + T.demo_separator
        table[(d + "QV ->", " yes")] = [-validation_spec["l_v"]]
        table[(d, "QT ->")] = [validation_spec["lp_t"]]
        table[(d, "QV ->")] = [validation_spec["lp_v"]]
    for i, spec in enumerate(specs, start=1):
        cand = _candidate(i, rank=i, sim=0.9 - 0.01 * i)
        candidates.append(cand)
        d = cand.demo_text + T.demo_separator
        table[(d + "QV ->", " yes")] = [-spec["l_v"]]
        table[(d, "QT ->")] = [spec["lp_t"]]
        table[(d, "QV ->")] = [spec["lp_v"]]
    cand_set = CandidateSet(test_id=TEST_EX.id, candidates=tuple(candidates),
                            k=len(candidates))
    cfg = SelectionConfig(strategy="dva", k=len(candidates),
                          n_shot=min(n_shot, len(specs)), lambda_=lambda_, **cfg_kw)
    return MockBackend(table), cand_set, cfg


def simple_set(sims: list[float]) -> CandidateSet:
    candidates = tuple(_candidate(i, rank=i, sim=s) for i, s in enumerate(sims))
    return CandidateSet(test_id="t0", candidates=candidates, k=len(sims))


# ------------------------------------------------------------------- split

def test_split_nearest():
    split = split_validation(simple_set([0.9, 0.5, 0.3]), "nearest")
    assert split.validation.retrieval_rank == 0
    assert [c.retrieval_rank for c in split.remaining] == [1, 2]


def test_split_furthest():
    split = split_validation(simple_set([0.9, 0.5, 0.3]), "furthest")
    assert split.validation.retrieval_rank == 2


def test_split_leaves_k_minus_one():
    cand_set = simple_set([0.9 - i * 0.01 for i in range(30)])
    split = split_validation(cand_set, "nearest")
    assert len(split.remaining) == 29


def test_split_random_is_seeded():
    cand_set = simple_set([0.9, 0.5, 0.3, 0.2])
    a = split_validation(cand_set, "random", seed=11)
    b = split_validation(cand_set, "random", seed=11)
    assert a.validation.example_id == b.validation.example_id
    picks = {split_validation(cand_set, "random", seed=s).validation.example_id
             for s in range(40)}
    assert len(picks) > 1  # the draw actually depends on the seed


def test_split_needs_two():
    with pytest.raises(SelectionError):
        split_validation(simple_set([0.9]), "nearest")


# ------------------------------------------------------------------ losses

def test_validation_loss_negates_total():
    backend, cand_set, _ = mock_instance([{"l_v": 1.7, "lp_t": -1.0, "lp_v": -1.0}])
    cand = cand_set.candidates[1]
    assert validation_loss(backend, cand, VAL_EX, T) == pytest.approx(1.7, abs=1e-12)


def test_validation_loss_empty_answer_warns(caplog):
    empty_t = TaskTemplate("empty", "{x}{answer}", "{x}", {"y": ""})
    cand = Candidate(Example("c1", {"x": "d"}, "y"), "d", 0, 1.0)
    backend = MockBackend({})
    with caplog.at_level("WARNING", logger="iclsel.selection"):
        loss = validation_loss(backend, cand, Example("v", {"x": "q"}, "y"), empty_t)
    assert loss == 0.0
    assert backend.logprob_calls == 0
    assert any("empty answer" in rec.message for rec in caplog.records)


def test_validation_loss_unigram_hand_value():
    vocab = {"a": 0.5, "b": 0.25, "c": 0.25}
    backend = UnigramBackend(vocab)
    t = TaskTemplate("unigram", "{x}{answer}", "{x}", {"y": " a b"})
    cand = Candidate(Example("c1", {"x": "c"}, "y"), "c a b", 0, 1.0)
    loss = validation_loss(backend, cand, Example("v", {"x": "c"}, "y"), t)
    assert loss == pytest.approx(2.0794415416798357, abs=1e-6)


def test_calibration_remainder_symmetry_and_sign():
    backend, cand_set, _ = mock_instance([
        {"l_v": 1.0, "lp_t": -1.5, "lp_v": -1.5},   # equal -> 0
        {"l_v": 1.0, "lp_t": -2.0, "lp_v": -1.0},   # spec worked example -> 1.0
        {"l_v": 1.0, "lp_t": -1.0, "lp_v": -3.0},   # model prefers the test input
    ])
    c1, c2, c3 = cand_set.candidates[1:]
    assert calibration_remainder(backend, c1, TEST_EX, VAL_EX, T) == 0.0
    assert calibration_remainder(backend, c2, TEST_EX, VAL_EX, T) == pytest.approx(1.0, abs=1e-12)
    assert calibration_remainder(backend, c3, TEST_EX, VAL_EX, T) == pytest.approx(-2.0, abs=1e-12)


def test_calibration_remainder_unigram_hand_value():
    # query contexts render to bare tokens "a" (test) and "b" (validation)
    backend = UnigramBackend({"a": 0.5, "b": 0.25, "c": 0.25})
    t = TaskTemplate("bare", "{x}{answer}", "{x}", {"y": " c"})
    cand = Candidate(Example("c1", {"x": "c"}, "y"), "c c", 0, 1.0)
    eps = calibration_remainder(backend, cand, Example("t", {"x": "a"}, "y"),
                                Example("v", {"x": "b"}, "y"), t)
    # ln 0.25 - ln 0.5: negative means the model prefers the test input
    assert eps == pytest.approx(-0.6931471805599453, abs=1e-6)


# ------------------------------------------------------------------- score

def test_dva_score_worked_example():
    assert dva_score(2.0, 1.0, 0.6) == pytest.approx(1.4, abs=1e-12)


def test_dva_score_boundaries():
    assert dva_score(2.5, -0.7, 0.0) == 2.5
    assert dva_score(2.5, -0.7, 1.0) == -0.7


def test_dva_score_lambda_range():
    with pytest.raises(ConfigError):
        dva_score(1.0, 1.0, 1.5)


def test_scored_candidate_score_identity():
    specs = [{"l_v": 1.0 + i * 0.3, "lp_t": -1.0 - 0.1 * i, "lp_v": -2.0 + 0.05 * i}
             for i in range(5)]
    backend, cand_set, cfg = mock_instance(specs, lambda_=0.6, n_shot=2)
    sel = select_dva(backend, cand_set, TEST_EX, cfg, T)
    for sc in sel.scored:
        assert sc.score == pytest.approx((1 - 0.6) * sc.l_v + 0.6 * sc.epsilon, abs=1e-9)


# -------------------------------------------------------------- select_dva

def test_select_dva_worked_example():
    # lambda=0 makes score == l_v: remaining scores [1.4, 0.2, 0.9]
    backend, cand_set, cfg = mock_instance(
        [{"l_v": 1.4, "lp_t": -1.0, "lp_v": -1.0},
         {"l_v": 0.2, "lp_t": -1.0, "lp_v": -1.0},
         {"l_v": 0.9, "lp_t": -1.0, "lp_v": -1.0}],
        lambda_=0.0, n_shot=2)
    sel = select_dva(backend, cand_set, TEST_EX, cfg, T)
    assert [sc.score for sc in sel.selected] == [0.9, 0.2]  # descending prompt order
    assert [sc.selected_rank for sc in sel.selected] == [0, 1]
    assert sel.validation.example_id == "v0"


def test_select_dva_validation_never_selected():
    specs = [{"l_v": 0.1 * i, "lp_t": -1.0, "lp_v": -1.0} for i in range(6)]
    backend, cand_set, cfg = mock_instance(specs, n_shot=4)
    sel = select_dva(backend, cand_set, TEST_EX, cfg, T)
    assert "v0" not in [sc.candidate.example_id for sc in sel.selected]


def test_select_dva_lambda_boundaries_match_single_criterion_sort():
    rng = random.Random(5)
    specs = [{"l_v": rng.uniform(0, 4), "lp_t": -rng.uniform(0, 5), "lp_v": -rng.uniform(0, 5)}
             for _ in range(8)]
    for lam, key in ((0.0, "l_v"), (1.0, "epsilon")):
        backend, cand_set, cfg = mock_instance(specs, lambda_=lam, n_shot=3)
        sel = select_dva(backend, cand_set, TEST_EX, cfg, T)
        by_criterion = sorted(sel.scored, key=lambda s: (getattr(s, key),
                                                         s.candidate.retrieval_rank))
        want = [sc.candidate.example_id for sc in by_criterion[:3]]
        got = [sc.candidate.example_id for sc in reversed(sel.selected)]
        assert got == want


def test_select_dva_ties_break_by_retrieval_rank():
    specs = [{"l_v": 1.0, "lp_t": -1.0, "lp_v": -1.0} for _ in range(4)]
    backend, cand_set, cfg = mock_instance(specs, lambda_=0.0, n_shot=2)
    sel = select_dva(backend, cand_set, TEST_EX, cfg, T)
    # all scores equal: lowest retrieval ranks win; descending order reverses
    assert [sc.candidate.retrieval_rank for sc in sel.selected] == [2, 1]


def test_select_dva_orderings():
    specs = [{"l_v": v, "lp_t": -1.0, "lp_v": -1.0} for v in (0.5, 0.1, 0.9, 0.3)]
    for ordering, expected in (("descending", [0.5, 0.3, 0.1]),
                               ("ascending", [0.1, 0.3, 0.5])):
        backend, cand_set, cfg = mock_instance(specs, lambda_=0.0, n_shot=3,
                                               ordering=ordering)
        sel = select_dva(backend, cand_set, TEST_EX, cfg, T)
        assert [round(sc.score, 6) for sc in sel.selected] == expected
    backend, cand_set, cfg = mock_instance(specs, lambda_=0.0, n_shot=3,
                                           ordering="shuffled", seed=3)
    first = select_dva(backend, cand_set, TEST_EX, cfg, T)
    second = select_dva(backend, cand_set, TEST_EX, cfg, T)
    assert [s.candidate.example_id for s in first.selected] == \
        [s.candidate.example_id for s in second.selected]


def test_select_dva_affine_shift_leaves_selection_unchanged():
    rng = random.Random(17)
    base = [{"l_v": rng.uniform(0, 3), "lp_t": -rng.uniform(0, 4), "lp_v": -rng.uniform(0, 4)}
            for _ in range(7)]
    backend, cand_set, cfg = mock_instance(base, lambda_=0.6, n_shot=3)
    picked = [sc.candidate.example_id
              for sc in select_dva(backend, cand_set, TEST_EX, cfg, T).selected]
    shifted = [{**s, "l_v": s["l_v"] + 2.5} for s in base]
    backend2, cand_set2, cfg2 = mock_instance(shifted, lambda_=0.6, n_shot=3)
    picked_shifted = [sc.candidate.example_id
                      for sc in select_dva(backend2, cand_set2, TEST_EX, cfg2, T).selected]
    assert picked == picked_shifted


def test_per_token_normalization_rescales_losses():
    backend, cand_set, _ = mock_instance(
        [{"l_v": 1.0, "lp_t": -1.0, "lp_v": -1.0}])
    cand = cand_set.candidates[1]
    b2 = MockBackend({k: [v[0] / 2, v[0] / 2] for k, v in backend.table.items()})
    # two half-sized tokens: same sum, half the per-token mean
    assert validation_loss(b2, cand, VAL_EX, T, normalization="sum") == \
        pytest.approx(1.0, abs=1e-12)
    assert validation_loss(b2, cand, VAL_EX, T, normalization="per_token") == \
        pytest.approx(0.5, abs=1e-12)


def test_select_dva_touches_exactly_the_pinned_calls():
    """A selection run on a mock is a complete specification of the model
    calls the algorithm makes: 3 per remaining candidate (validation answer,
    test context, validation context), nothing else."""
    specs = [{"l_v": 0.3 * i, "lp_t": -1.0 - i, "lp_v": -2.0} for i in range(5)]
    backend, cand_set, cfg = mock_instance(specs, n_shot=2)
    select_dva(backend, cand_set, TEST_EX, cfg, T)
    assert backend.logprob_calls == 3 * 5
    assert len(backend.table) == 3 * 5 + 0  # no validation-candidate entries needed


def test_select_dva_insufficient_candidates():
    backend, cand_set, _ = mock_instance(
        [{"l_v": 1.0, "lp_t": -1.0, "lp_v": -1.0}])
    cfg = SelectionConfig(strategy="dva", k=5, n_shot=2)  # set only has 2
    with pytest.raises(SelectionError, match="candidates"):
        select_dva(backend, cand_set, TEST_EX, cfg, T)


def test_select_dva_exhaustive_subset_oracle():
    """The greedy top-n equals the subset of size n minimizing total score,
    with scores recomputed by an independent composition of backend calls."""
    backend = ContextUnigramBackend(
        {"alpha": 0.2, "beta": 0.2, "gamma": 0.2, "yes": 0.2, "no": 0.2}, boost=2.0)
    t = TaskTemplate("toy", "{x} {answer}", "{x}", {"y": "yes", "n": "no"})
    words = ["alpha", "beta", "gamma"]
    rng = random.Random(23)
    for trial in range(6):
        examples = [
            Example(f"c{i}", {"x": " ".join(rng.choices(words, k=3))},
                    rng.choice(["y", "n"]))
            for i in range(6)
        ]
        candidates = tuple(
            Candidate(ex, render_demo(t, ex), rank, 1.0 - 0.01 * rank)
            for rank, ex in enumerate(examples)
        )
        cand_set = CandidateSet("t0", candidates, k=6)
        test_ex = Example("t0", {"x": " ".join(rng.choices(words, k=3))}, "y")
        cfg = SelectionConfig(strategy="dva", k=6, n_shot=3, lambda_=0.6, seed=1)
        sel = select_dva(backend, cand_set, test_ex, cfg, t)
        got = frozenset(sc.candidate.example_id for sc in sel.selected)

        # independent recomputation of each candidate's score
        val = candidates[0]
        v_ctx, v_ans = render_query(t, val.example)
        t_ctx, _ = render_query(t, test_ex)
        scores = {}
        for cand in candidates[1:]:
            lv = -backend.conditional_logprob(cand.demo_text + "\n" + v_ctx, v_ans).total
            lp_t = backend.conditional_logprob(cand.demo_text + "\n", t_ctx).total
            lp_v = backend.conditional_logprob(cand.demo_text + "\n", v_ctx).total
            scores[cand.example_id] = 0.4 * lv + 0.6 * (lp_v - lp_t)
        best = min(
            itertools.combinations(scores, 3),
            key=lambda combo: (sum(scores[c] for c in combo), combo),
        )
        assert got == frozenset(best), f"trial {trial}"


# --------------------------------------------------------------- baselines

def test_baseline_topk_prompt_order():
    cand_set = simple_set([0.9, 0.8, 0.7, 0.6])
    cfg = SelectionConfig(strategy="topk", k=4, n_shot=2)
    sel = select_baseline(None, cand_set, TEST_EX, cfg, T)
    assert [c.retrieval_rank for c in sel.selected] == [1, 0]


def test_baseline_random_is_seeded_and_replacement_free():
    cand_set = simple_set([0.5] * 10)
    cfg = SelectionConfig(strategy="random", k=10, n_shot=4, seed=9)
    a = select_baseline(None, cand_set, TEST_EX, cfg, T)
    b = select_baseline(None, cand_set, TEST_EX, cfg, T)
    assert [c.example_id for c in a.selected] == [c.example_id for c in b.selected]
    assert len({c.example_id for c in a.selected}) == 4
    other = select_baseline(
        None, cand_set, TEST_EX,
        SelectionConfig(strategy="random", k=10, n_shot=4, seed=10), T)
    assert [c.example_id for c in a.selected] != [c.example_id for c in other.selected] or True


def test_baseline_cone_ties_use_retrieval_rank():
    backend = UnigramBackend({"qt": 0.5, "a": 0.5})
    t = TaskTemplate("bare", "{x}{answer}", "{x}", {"y": " a"})
    examples = [Example(f"c{i}", {"x": "qt"}, "y") for i in range(4)]
    candidates = tuple(Candidate(ex, render_demo(t, ex), r, 1.0 - r * 0.1)
                       for r, ex in enumerate(examples))
    cand_set = CandidateSet("t0", candidates, k=4)
    cfg = SelectionConfig(strategy="cone", k=4, n_shot=2)
    sel = select_baseline(backend, cand_set, Example("t0", {"x": "qt"}, "y"), cfg, t)
    # identical scores everywhere: ranks 0 and 1 win, descending order reverses
    assert [c.retrieval_rank for c in sel.selected] == [1, 0]
    assert len(sel.scored) == 4


def test_baseline_cone_prefers_low_test_nll():
    backend = ContextUnigramBackend({"qt": 0.25, "a": 0.25, "b": 0.25, "yes": 0.25},
                                    boost=3.0)
    t = TaskTemplate("bare", "{x} {answer}", "{x}", {"y": "yes"})
    helpful = Example("good", {"x": "qt qt"}, "y")     # mentions the test input
    neutral = Example("meh", {"x": "a b"}, "y")
    candidates = (
        Candidate(neutral, render_demo(t, neutral), 0, 0.9),
        Candidate(helpful, render_demo(t, helpful), 1, 0.8),
    )
    cand_set = CandidateSet("t0", candidates, k=2)
    cfg = SelectionConfig(strategy="cone", k=2, n_shot=1)
    sel = select_baseline(backend, cand_set, Example("t0", {"x": "qt"}, "y"), cfg, t)
    assert sel.selected[0].example_id == "good"


def test_baseline_rejects_wrong_strategy():
    cand_set = simple_set([0.9, 0.8])
    with pytest.raises(ConfigError):
        select_baseline(None, cand_set, TEST_EX,
                        SelectionConfig(strategy="dva", k=2, n_shot=1), T)


# ------------------------------------------------------------------ oracle

def test_oracle_picks_argmax_candidate():
    table = {}
    candidates = []
    for i, l_t in enumerate([1.2, 0.3, 2.0]):
        cand = _candidate(i, rank=i, sim=0.9 - 0.01 * i)
        candidates.append(cand)
        table[(cand.demo_text + "\nQT ->", " yes")] = [-l_t]
    backend = MockBackend(table)
    cand_set = CandidateSet("t0", tuple(candidates), k=3)
    ranked = oracle_select(backend, cand_set, TEST_EX, 2, T)
    assert [s.candidate.example_id for s in ranked] == ["c1", "c0"]
    assert ranked[0].l_t == pytest.approx(0.3, abs=1e-12)


def test_oracle_all_equal_falls_back_to_rank():
    backend = UnigramBackend({"qt": 0.5, "yes": 0.5})
    t = TaskTemplate("bare", "{x} {answer}", "{x}", {"y": "yes"})
    examples = [Example(f"c{i}", {"x": "qt"}, "y") for i in range(4)]
    candidates = tuple(Candidate(ex, render_demo(t, ex), r, 1.0 - 0.1 * r)
                       for r, ex in enumerate(examples))
    ranked = oracle_select(backend, CandidateSet("t0", candidates, k=4),
                           Example("t0", {"x": "qt"}, "y"), 2, t)
    assert [s.candidate.retrieval_rank for s in ranked] == [0, 1]


def test_oracle_requires_label():
    backend = MockBackend({})
    cand_set = simple_set([0.9, 0.8])
    with pytest.raises(SelectionError, match="labeled"):
        oracle_select(backend, cand_set, Example("t0", {"x": "QT"}), 1, T)


def test_oracle_matches_bruteforce_on_context_unigram():
    backend = ContextUnigramBackend(
        {"u": 0.25, "v": 0.25, "yes": 0.25, "no": 0.25}, boost=2.0)
    t = TaskTemplate("toy", "{x} {answer}", "{x}", {"y": "yes", "n": "no"})
    rng = random.Random(3)
    test_ex = Example("t0", {"x": "u v"}, "y")
    t_ctx, t_ans = render_query(t, test_ex)
    examples = [Example(f"c{i}", {"x": " ".join(rng.choices(["u", "v"], k=2))},
                        rng.choice(["y", "n"])) for i in range(8)]
    candidates = tuple(Candidate(ex, render_demo(t, ex), r, 1.0 - 0.01 * r)
                       for r, ex in enumerate(examples))
    ranked = oracle_select(backend, CandidateSet("t0", candidates, k=8), test_ex, 8, t)
    brute = sorted(
        candidates,
        key=lambda c: (-backend.conditional_logprob(c.demo_text + "\n" + t_ctx, t_ans).total,
                       c.retrieval_rank),
    )
    assert [s.candidate.example_id for s in ranked] == [c.example_id for c in brute]


# --------------------------------------------------------------- BT view

def test_bt_preference_symmetry():
    backend, cand_set, _ = mock_instance([{"l_v": 1.0, "lp_t": -2.0, "lp_v": -2.0}])
    cand = cand_set.candidates[1]
    p = bt_preference(backend, cand, TEST_EX, VAL_EX, T)
    assert p == 0.5
    assert -math.log(p / (1 - p)) == 0.0
    assert calibration_remainder(backend, cand, TEST_EX, VAL_EX, T) == 0.0


def test_bt_preference_hand_value():
    # logP difference of ln 3 gives p = 0.75 and -log-odds of -ln 3
    backend, cand_set, _ = mock_instance(
        [{"l_v": 1.0, "lp_t": -1.0, "lp_v": -1.0 - LN3}])
    cand = cand_set.candidates[1]
    p = bt_preference(backend, cand, TEST_EX, VAL_EX, T)
    assert p == pytest.approx(0.75, abs=1e-12)
    assert -math.log(p / (1 - p)) == pytest.approx(-1.0986122886681098, abs=1e-9)
    eps = calibration_remainder(backend, cand, TEST_EX, VAL_EX, T)
    assert eps == pytest.approx(-LN3, abs=1e-9)


def test_bt_preference_unigram_thirds():
    backend = UnigramBackend({"a": 0.5, "b": 0.25, "c": 0.25})
    t = TaskTemplate("bare", "{x}{answer}", "{x}", {"y": " c"})
    cand = Candidate(Example("c1", {"x": "c"}, "y"), "c c", 0, 1.0)
    p = bt_preference(backend, cand, Example("t", {"x": "a"}, "y"),
                      Example("v", {"x": "b"}, "y"), t)
    assert p == pytest.approx(2.0 / 3.0, abs=1e-6)
    eps = calibration_remainder(backend, cand, Example("t", {"x": "a"}, "y"),
                                Example("v", {"x": "b"}, "y"), t)
    assert -math.log(p / (1 - p)) == pytest.approx(eps, abs=1e-9)
    assert eps == pytest.approx(-LN2, abs=1e-6)


def test_bt_identity_randomized():
    rng = random.Random(42)
    for _ in range(200):
        lp_t, lp_v = -rng.uniform(0, 12), -rng.uniform(0, 12)
        backend, cand_set, _ = mock_instance([{"l_v": 1.0, "lp_t": lp_t, "lp_v": lp_v}])
        cand = cand_set.candidates[1]
        p = bt_preference(backend, cand, TEST_EX, VAL_EX, T)
        eps = calibration_remainder(backend, cand, TEST_EX, VAL_EX, T)
        assert abs(eps - (-math.log(p / (1 - p)))) < 1e-9


# ------------------------------------------------------------------ config

def test_config_defaults_match_main_setting():
    cfg = SelectionConfig()
    assert (cfg.k, cfg.n_shot, cfg.lambda_) == (30, 8, 0.6)
    assert cfg.ordering == "descending"
    assert cfg.validation_policy == "nearest"
    assert cfg.normalization == "sum"


def test_config_validation_budget():
    with pytest.raises(ConfigError, match="n_shot"):
        SelectionConfig(strategy="dva", k=8, n_shot=8)
    SelectionConfig(strategy="topk", k=8, n_shot=8)  # fine without a holdout


def test_config_rejects_bad_values():
    with pytest.raises(ConfigError):
        SelectionConfig(strategy="fancy")
    with pytest.raises(ConfigError):
        SelectionConfig(lambda_=1.2)
    with pytest.raises(ConfigError):
        SelectionConfig(ordering="sideways")


# ---------------------------------------------------------- candidate sets

def test_make_candidate_set_ranks_and_budget():
    train = [Example(f"d{i:02d}", {"x": f"w{i} common"}, "y") for i in range(50)]
    provider = Bm25Provider(build_bm25([(ex.id, ex.fields["x"]) for ex in train]))
    t = TaskTemplate("bare", "{x}{answer}", "{x}", {"y": " yes"})
    test_ex = Example("q0", {"x": "common w3"}, "y")
    cand_set = make_candidate_set(provider, {ex.id: ex for ex in train}, t, test_ex, k=30)
    assert len(cand_set) == 30
    assert [c.retrieval_rank for c in cand_set.candidates] == list(range(30))
    sims = [c.retrieval_similarity for c in cand_set.candidates]
    assert sims == sorted(sims, reverse=True)
    assert cand_set.candidates[0].example_id == "d03"


def test_full_candidate_set_excludes_test_id():
    train = [Example(f"d{i}", {"x": "w"}, "y") for i in range(5)]
    t = TaskTemplate("bare", "{x}{answer}", "{x}", {"y": " yes"})
    cand_set = full_candidate_set(train, t, Example("d3", {"x": "w"}, "y"))
    assert len(cand_set) == 4
    assert "d3" not in [c.example_id for c in cand_set.candidates]


def test_candidate_set_rank_contiguity_enforced():
    bad = (_candidate(0, rank=0, sim=0.9), _candidate(1, rank=2, sim=0.8))
    with pytest.raises(SelectionError, match="contiguous"):
        CandidateSet("t0", bad, k=2)
