import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from namestate.corpus import NameHistogram
from namestate.errors import DataError
from namestate.evaluation import (
    MajorityPredictor,
    NaiveBayesLookup,
    NaiveBayesPredictor,
    TopKOutcome,
    evaluate,
    majority_baseline,
    naive_bayes_predict,
    pct,
    per_state_accuracy,
    read_outcomes,
    score,
    slice_extremes,
    slice_weighted_random,
    write_outcomes,
    write_table1,
    table1_row,
)

from oracles import brute_naive_bayes, brute_top_k

STATES = "ABCDE"


def hist(name, counts):
    h = NameHistogram(name)
    for s, c in counts.items():
        h.state_counts[s] = c
        h.state_female[s] = 0
        h.state_sex_known[s] = 0
    return h


counts_st = st.dictionaries(st.sampled_from(STATES), st.integers(1, 4), min_size=1)
corpus_st = st.dictionaries(st.sampled_from(["kumar", "rao", "shah", "devi", "iyer"]), counts_st, min_size=1)


def outcome(name, pop, hit=True):
    return TopKOutcome(name, ("A",), ("A",) if hit else ("B",), hit, hit, pop, None)


def test_majority_toy():
    hs = [hist("x", {"A": 4, "B": 1}), hist("y", {"A": 3, "B": 2})]
    assert majority_baseline(hs) == ("A", 0.7)
    assert MajorityPredictor(hs)(["a", "b"]) == [["A"], ["A"]]
    with pytest.raises(DataError):
        majority_baseline([])


def test_majority_tie_goes_to_smaller_state():
    assert majority_baseline([hist("x", {"B": 2, "A": 2})])[0] == "A"


def test_naive_bayes_examples():
    lookup = NaiveBayesLookup([hist("kumar", {"UP": 5, "Bihar": 3, "Delhi": 1}),
                               hist("rao", {"AP": 9})])
    assert naive_bayes_predict(lookup, "kumar", 3) == ["UP", "Bihar", "Delhi"]
    # seen name with one state is padded from the global prior
    assert naive_bayes_predict(lookup, "rao", 3) == ["AP", "UP", "Bihar"]
    # unseen name gets the prior
    assert naive_bayes_predict(lookup, "zzz", 2) == ["AP", "UP"]


@given(corpus_st, st.sampled_from(["kumar", "rao", "unseen"]), st.integers(1, 6))
def test_naive_bayes_matches_brute_force(train, name, k):
    lookup = NaiveBayesLookup([hist(n, c) for n, c in train.items()])
    assert naive_bayes_predict(lookup, name, k) == brute_naive_bayes(train, name, k)


def _brute_scores(preds, hists, k=3):
    hits = modal = 0
    for p, h in zip(preds, hists):
        truth = brute_top_k(h.state_counts, k)
        hits += any(s in truth for s in p[:k])
        modal += bool(p) and p[0] == truth[0]
    return hits / len(hists), modal / len(hists)


@given(st.lists(st.tuples(counts_st, st.lists(st.sampled_from(STATES), max_size=3, unique=True)),
                min_size=1, max_size=20))
def test_evaluate_matches_brute_force(cases):
    hists = [hist(f"n{i}", c) for i, (c, _) in enumerate(cases)]
    preds = [p for _, p in cases]
    outcomes, rep = evaluate(lambda names: preds, hists)
    top, mod = _brute_scores(preds, hists)
    assert rep.topk_accuracy == top and rep.modal_accuracy == mod
    assert rep.topk_accuracy >= rep.modal_accuracy
    assert rep.n == len(hists) and [o.name for o in outcomes] == [h.last_name for h in hists]


@settings(max_examples=30)
@given(st.lists(counts_st, min_size=2, max_size=15), st.randoms(use_true_random=False))
def test_evaluate_permutation_invariant(counts, rnd):
    hists = [hist(f"n{i}", c) for i, c in enumerate(counts)]
    predictor = NaiveBayesPredictor(hists[:1])
    _, a = evaluate(predictor, hists)
    shuffled = hists[:]
    rnd.shuffle(shuffled)
    _, b = evaluate(predictor, shuffled)
    assert (a.topk_accuracy, a.modal_accuracy) == (b.topk_accuracy, b.modal_accuracy)


def test_oracle_and_absent_predictors():
    hists = [hist("a", {"A": 3, "B": 1}), hist("b", {"C": 2}), hist("c", {"D": 5, "E": 4})]
    truth = {h.last_name: brute_top_k(h.state_counts, 3) for h in hists}
    _, rep = evaluate(lambda names: [truth[n] for n in names], hists)
    assert rep.topk_accuracy == 1.0 and rep.modal_accuracy == 1.0
    _, rep = evaluate(lambda names: [["Z"] for _ in names], hists)
    assert rep.topk_accuracy == 0.0 and rep.modal_accuracy == 0.0
    _, rep = evaluate(lambda names: [[] for _ in names], hists)
    assert rep.topk_accuracy == 0.0
    with pytest.raises(DataError):
        evaluate(lambda names: [], [])


def test_weighted_random_prefers_popular_names():
    outs = [outcome(f"n{i}", pop) for i, pop in enumerate([1, 1, 1, 97])]
    picks = np.zeros(4)
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        picks[rng.choice(4, size=1, replace=False, p=np.array([1, 1, 1, 97]) / 100)] += 1
    # chi-square against the expected first-draw frequencies
    expected = 1000 * np.array([0.01, 0.01, 0.01, 0.97])
    assert ((picks - expected) ** 2 / expected).sum() < 16.27  # 3 dof, p = 0.001
    a, b = slice_weighted_random(outs, 2, seed=5), slice_weighted_random(outs, 2, seed=5)
    assert a == b and a.n == 2


def test_weighted_random_sample_frequencies():
    pops = [1, 2, 3, 4]
    outs = [outcome(f"n{i}", p, hit=(i == 3)) for i, p in enumerate(pops)]
    hits = sum(slice_weighted_random(outs, 1, seed=s).topk_accuracy for s in range(1000))
    # P(pick n3) = 0.4; 3 sigma bound for 1000 Bernoulli draws
    assert abs(hits - 400) < 3 * np.sqrt(1000 * 0.4 * 0.6)


def test_weighted_random_uses_all_when_small():
    outs = [outcome("a", 1), outcome("b", 2, hit=False)]
    rep = slice_weighted_random(outs, 10)
    assert rep.n == 2 and rep.topk_accuracy == 0.5 and "used all" in rep.note


def test_extremes():
    outs = [outcome(f"n{i}", pop, hit=pop > 5) for i, pop in enumerate([1, 9, 3, 7, 5, 10])]
    top, bottom = slice_extremes(outs, 2)
    assert (top.topk_accuracy, bottom.topk_accuracy) == (1.0, 0.0)
    assert top.slice_name == "top" and bottom.n == 2
    tied = [outcome("b", 1, hit=False), outcome("a", 1)]
    top, bottom = slice_extremes(tied, 1)
    assert bottom.topk_accuracy == 1.0 and top.topk_accuracy == 0.0


def test_per_state_accuracy():
    hists = [hist(f"a{i}", {"A": 2}) for i in range(5)] + [hist(f"b{i}", {"B": 2}) for i in range(3)]
    outcomes, _ = evaluate(lambda names: [[n[0].upper()] for n in names], hists)
    rep = per_state_accuracy(outcomes, per_state_n=4, seed=1)
    assert list(rep) == ["A", "B"]
    assert rep["A"].n == 4 and rep["B"].n == 3
    assert rep["A"].topk_accuracy == rep["B"].topk_accuracy == 1.0
    assert per_state_accuracy(outcomes, 4, seed=1) == rep


def test_score_empty_slice():
    with pytest.raises(DataError):
        score([], "x")


def test_writers_round_trip(tmp_path):
    hists = [hist("kumar", {"UP": 2, "Bihar": 1}), hist("rao", {"AP": 3})]
    outcomes, rep = evaluate(lambda names: [["UP", "AP"], ["X"]], hists)
    write_outcomes(tmp_path / "o.csv", outcomes)
    assert read_outcomes(tmp_path / "o.csv") == outcomes
    assert pct(0.8534) == "85.3" and pct(1.0) == "100.0"
    write_table1(tmp_path / "t.csv", [table1_row("GRU", [rep, rep, rep, rep])])
    assert (tmp_path / "t.csv").read_text() == \
        "model,test_set,weighted_random,top,bottom\nGRU,50.0,50.0,50.0,50.0\n"
    (tmp_path / "bad.csv").write_text("nope\n")
    with pytest.raises(DataError):
        read_outcomes(tmp_path / "bad.csv")
