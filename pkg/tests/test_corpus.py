import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from namestate.corpus import (
    NameHistogram,
    aggregate,
    female_share,
    popularity,
    read_histograms,
    read_split,
    split_by_name,
    top_k_states,
    write_histograms,
    write_split,
)
from namestate.ingest import CleanRecord

from oracles import brute_top_k


def hist(name, counts, female=None, known=None):
    h = NameHistogram(name)
    for s, c in counts.items():
        h.state_counts[s] = c
        h.state_female[s] = (female or {}).get(s, 0)
        h.state_sex_known[s] = (known or {}).get(s, 0)
    return h


records_st = st.lists(st.builds(CleanRecord, st.sampled_from(["kumar", "rao", "devi", "shah"]),
                                st.sampled_from(["F", "M", "U"]), st.sampled_from(["UP", "Bihar", "Delhi"])),
                      max_size=60)


def test_aggregate_example():
    recs = [CleanRecord("kumar", "F", "UP"), CleanRecord("kumar", "M", "Bihar"), CleanRecord("kumar", "M", "UP")]
    (h,) = aggregate(recs)
    assert h.state_counts == {"UP": 2, "Bihar": 1}
    assert (h.total, h.female, h.sex_known) == (3, 1, 3)
    assert aggregate([]) == []
    (single,) = aggregate([CleanRecord("rao", "U", "UP")])
    assert single.total == 1 and single.sex_known == 0


@given(records_st, st.integers(1, 4))
def test_aggregate_invariants(recs, threads):
    hs = aggregate(recs, threads=threads)
    assert [h.last_name for h in hs] == sorted({r.last_name for r in recs})
    assert sum(h.total for h in hs) == len(recs)
    for h in hs:
        assert h.total == sum(h.state_counts.values())
        assert 0 <= h.female <= h.sex_known <= h.total
        expect = {}
        for r in recs:
            if r.last_name == h.last_name:
                expect[r.state] = expect.get(r.state, 0) + 1
        assert h.state_counts == expect
    serial = aggregate(recs)
    assert [(h.last_name, h.state_counts, h.state_female, h.state_sex_known) for h in hs] == \
        [(h.last_name, h.state_counts, h.state_female, h.state_sex_known) for h in serial]


def test_popularity_and_female_share():
    h = hist("kumar", {"UP": 2, "Bihar": 1}, female={"UP": 1}, known={"UP": 2, "Bihar": 1})
    assert popularity(h) == 3
    assert female_share(h) == pytest.approx(1 / 3)
    assert female_share(hist("x", {"UP": 2})) is None
    assert female_share(hist("x", {"UP": 2}, {"UP": 2}, {"UP": 2})) == 1.0
    assert popularity(hist("x", {"A": 1})) == 1


def test_top_k_states():
    assert top_k_states(hist("x", {"UP": 5, "Bihar": 2, "Delhi": 2}), 3) == ["UP", "Bihar", "Delhi"]
    assert top_k_states(hist("x", {"UP": 1}), 3) == ["UP"]
    assert top_k_states(hist("x", {"A": 1, "B": 1}), 1) == ["A"]
    with pytest.raises(ValueError):
        top_k_states(hist("x", {"A": 1}), 0)


@given(st.dictionaries(st.sampled_from("ABCDEFG"), st.integers(1, 4), min_size=1), st.integers(1, 8))
def test_top_k_matches_brute_force(counts, k):
    out = top_k_states(hist("x", counts), k)
    assert out == brute_top_k(counts, k)
    values = [counts[s] for s in out]
    assert values == sorted(values, reverse=True)


def _names(n):
    return [hist(f"name{i:03d}", {"UP": 1 + i % 3, "Bihar": 1} if i % 2 else {"UP": 2}) for i in range(n)]


def test_split_sizes_and_partition():
    hs = _names(10)
    sp = split_by_name(hs, 0.8, seed=7)
    assert len(sp.train_names) == 8 and len(sp.test_names) == 2
    assert set(sp.train_names) | set(sp.test_names) == {h.last_name for h in hs}
    assert not set(sp.train_names) & set(sp.test_names)
    assert {n for n, _ in sp.train_pairs} == set(sp.train_names)
    assert len(sp.train_pairs) == len(set(sp.train_pairs))
    assert sp.states == ["Bihar", "UP"]


def test_split_expands_unique_pairs():
    hs = [hist("kumar", {"UP": 5, "Bihar": 2}), hist("rao", {"AP": 1})]
    sp = split_by_name(hs, 0.5, seed=0)
    if "kumar" in sp.train_names:
        assert sp.train_pairs == [("kumar", "Bihar"), ("kumar", "UP")]
    else:
        assert sp.train_pairs == [("rao", "AP")]


def test_split_deterministic_and_seed_sensitive():
    hs = _names(50)
    a, b = split_by_name(hs, 0.8, 3), split_by_name(hs, 0.8, 3)
    assert a.train_pairs == b.train_pairs and a.test_names == b.test_names
    assert split_by_name(hs, 0.8, 4).test_names != a.test_names


@pytest.mark.parametrize("fraction", [0.0, 1.0, -0.1, 1.5])
def test_split_rejects_bad_fraction(fraction):
    with pytest.raises(ValueError):
        split_by_name(_names(5), fraction)


@settings(max_examples=30)
@given(st.integers(2, 40), st.floats(0.05, 0.95), st.integers(0, 1000))
def test_split_always_leaves_a_test_name(n, fraction, seed):
    sp = split_by_name(_names(n), fraction, seed)
    assert sp.test_histograms and sp.train_histograms
    for h in sp.test_histograms:
        assert top_k_states(h, 3)


def test_histogram_and_split_round_trip(tmp_path):
    hs = [hist("kumar", {"UP": 2, "Bihar": 1}, {"UP": 1}, {"UP": 2, "Bihar": 1})] + _names(9)
    write_histograms(hs, tmp_path / "h.csv")
    back = read_histograms(tmp_path / "h.csv")
    assert [(h.last_name, h.state_counts, h.state_female, h.state_sex_known) for h in back] == \
        [(h.last_name, h.state_counts, h.state_female, h.state_sex_known) for h in sorted(hs, key=lambda h: h.last_name)]
    sp = split_by_name(back, 0.8, 11)
    write_split(sp, tmp_path / "s.csv")
    text = (tmp_path / "s.csv").read_text()
    assert text.startswith("# seed=11\n")
    again = read_split(tmp_path / "s.csv", back)
    assert again.train_pairs == sp.train_pairs
    assert again.test_names == sp.test_names
    assert again.seed == 11 and again.train_fraction == 0.8
