import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dnsassoc.assoc import DomainGraph
from dnsassoc.pathinfer import (EmptySeedError, association_vector, mal_score, read_scores, score_all,
                                strongest_paths, write_scores)
from oracles import all_simple_path_strengths, oracle_mal_score


def dgraph(triples, extra=()):
    return DomainGraph.from_edges(triples, domains=extra)


# -- strongest paths ----------------------------------------------------------


def test_single_edge():
    assert strongest_paths(dgraph([("s", "u", 0.5)]), "s") == {"s": 1.0, "u": 0.5}


def test_two_routes_take_strongest():
    dg = dgraph([("s", "x", 0.9), ("x", "u", 0.9), ("s", "u", 0.5)])
    assert math.isclose(strongest_paths(dg, "s")["u"], 0.81, abs_tol=1e-15)


def test_disconnected_is_absent():
    dg = dgraph([("s", "x", 0.9)], extra=["u"])
    assert "u" not in strongest_paths(dg, "s")


def test_unknown_seed_skipped():
    assert strongest_paths(dgraph([("s", "x", 0.9)]), "nope") == {}


def test_floor_prunes_weak_paths():
    chain = [(f"n{k}", f"n{k + 1}", 0.5) for k in range(30)]
    got = strongest_paths(dgraph(chain), "n0")
    assert min(got.values()) >= 1e-6
    assert "n19" in got and "n20" not in got  # 2**-20 < 1e-6 <= 2**-19


# -- scores -------------------------------------------------------------------

HAND = [
    ([], Fraction(0)),
    ([1.0, 0.3], Fraction(1)),
    ([0.5], Fraction(1, 2)),
    ([0.5, 0.5], Fraction(5, 8)),
    ([0.8, 0.4, 0.2], None),
    ([0.5, 0.5, 0.5], Fraction(1, 2) + Fraction(1, 2) * (Fraction(1, 4) + Fraction(1, 8))),
    ([0.75, 0.5], Fraction(3, 4) + Fraction(1, 4) * Fraction(1, 4)),
    ([0.5, 0.25, 0.25, 0.25], Fraction(1, 2) + Fraction(1, 2) * (Fraction(1, 8) + Fraction(1, 16) + Fraction(1, 32))),
    ([0.9, 0.9, 0.9, 0.9, 0.9], None),
    ([0.25, 0.125], Fraction(1, 4) + Fraction(3, 4) * Fraction(1, 16)),
    ([0.5] * 20, None),
]


@pytest.mark.parametrize("vec,exact", HAND)
def test_mal_score_hand_values(vec, exact):
    exact = oracle_mal_score(vec) if exact is None else exact
    assert mal_score(vec) == float(exact)


def test_mal_score_documented_examples():
    assert mal_score([0.5, 0.5]) == 0.625
    assert mal_score([0.8, 0.4, 0.2]) == 0.85


def test_tail_cutoff_error_is_tiny():
    # terms below 1e-12 are dropped; for 50 halves that loses < 2e-12 in total
    vec = [0.5] * 50
    assert 0 <= float(oracle_mal_score(vec)) - mal_score(vec) < 2e-12


def test_unsorted_is_contract_violation():
    with pytest.raises(AssertionError):
        mal_score([0.2, 0.5])


def test_score_all_one_seed():
    dg = dgraph([("s", "x", 0.9), ("x", "u", 0.9), ("s", "u", 0.5)], extra=["lonely"])
    sc = score_all(dg, {"s"})
    assert sc["s"] == 1.0 and math.isclose(sc["u"], 0.81, abs_tol=1e-15) and sc["lonely"] == 0.0


def test_two_seeds_half_each():
    dg = dgraph([("s1", "u", 0.5), ("s2", "u", 0.5)])
    assert score_all(dg, {"s1", "s2"})["u"] == 0.625


def test_empty_effective_seed_set():
    with pytest.raises(EmptySeedError):
        score_all(dgraph([("a", "b", 0.5)]), {"zzz"})


def test_association_vector_sorted():
    dg = dgraph([("s1", "u", 0.5), ("s2", "u", 0.75), ("s3", "x", 0.5)])
    assert association_vector(dg, {"s1", "s2", "s3"}, "u") == [("s2", 0.75), ("s1", 0.5)]


def test_scores_round_trip(tmp_path):
    sc = {"a": 0.1 + 0.2, "b": 1.0, "c": 0.0}
    write_scores(sc, tmp_path / "s.csv")
    assert read_scores(tmp_path / "s.csv") == sc


# -- properties ---------------------------------------------------------------


@st.composite
def connected_weighted(draw, max_nodes=9):
    n = draw(st.integers(2, max_nodes))
    edges = {}
    for k in range(1, n):
        parent = draw(st.integers(0, k - 1))
        edges[(parent, k)] = draw(st.floats(0.5, 0.99))
    extra = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1), st.floats(0.5, 0.99)),
                          max_size=n))
    for a, b, w in extra:
        if a != b:
            edges[(min(a, b), max(a, b))] = w
    return n, [(a, b, w) for (a, b), w in edges.items()]


@settings(max_examples=100, deadline=None)
@given(connected_weighted())
def test_strongest_paths_match_enumeration(case):
    n, edges = case
    dg = dgraph([(f"n{a}", f"n{b}", w) for a, b, w in edges], extra=[f"n{k}" for k in range(n)])
    got = strongest_paths(dg, "n0", floor=0.0)
    want = all_simple_path_strengths(n, edges, 0)
    assert set(got) == {f"n{k}" for k in want}
    assert all(abs(got[f"n{k}"] - v) <= 1e-12 for k, v in want.items())


assoc_vectors = st.lists(st.floats(0.0, 1.0), max_size=12).map(lambda v: sorted(v, reverse=True))


@settings(max_examples=300, deadline=None)
@given(assoc_vectors)
def test_score_bounds(vec):
    s = mal_score(vec)
    assert 0.0 <= s <= 1.0
    if vec:
        assert (s == 1.0) == (vec[0] == 1.0) or s >= 1.0 - 1e-15


@settings(max_examples=300, deadline=None)
@given(assoc_vectors, st.floats(1e-6, 1.0))
def test_adding_evidence_never_lowers(vec, extra):
    assert mal_score(sorted(vec + [extra], reverse=True)) >= mal_score(vec) - 1e-15


@settings(max_examples=300, deadline=None)
@given(assoc_vectors.filter(bool), st.data())
def test_raising_one_value_never_lowers(vec, data):
    i = data.draw(st.integers(0, len(vec) - 1))
    bumped = list(vec)
    bumped[i] = data.draw(st.floats(vec[i], 1.0))
    assert mal_score(sorted(bumped, reverse=True)) >= mal_score(vec) - 1e-15


@settings(max_examples=300, deadline=None)
@given(assoc_vectors.filter(lambda v: v and v[0] <= 1.0 - 1e-9))
def test_weak_evidence_does_not_saturate(vec):
    assert mal_score(vec) < 1.0


def test_vectorized_scores_match_scalar():
    rng = np.random.default_rng(5)
    trip = []
    for k in range(60):
        a, b = rng.choice(40, 2, replace=False)
        trip.append((f"n{a}", f"n{b}", float(rng.uniform(0.5, 0.95))))
    dg = dgraph(trip)
    seeds = {f"n{k}" for k in range(0, 40, 4)}
    sc = score_all(dg, seeds)
    for d in dg.domains:
        if d in seeds:
            assert sc[d] == 1.0
            continue
        vec = [a for _, a in association_vector(dg, seeds, d)]
        assert abs(sc[d] - mal_score(vec)) <= 1e-15
