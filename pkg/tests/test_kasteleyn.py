import itertools
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from dimerlab.acceptance import random_triangle_region
from dimerlab.errors import NonSquare, SingularMatrix
from dimerlab.kasteleyn import (
    assemble, bareiss_determinant, count_matchings, count_matchings_exact,
    edge_probabilities, inverse_entry, joint_edge_probability,
)
from dimerlab.lattice import build_hexagon_region, region_from_triangles


def brute_count(region):
    return len(oracles.all_matchings(region.whites, region.blacks))


@pytest.mark.parametrize("abc, expected", [((1, 1, 1), 2), ((2, 2, 2), 20), ((3, 3, 3), 980), ((1, 2, 3), 10)])
def test_hexagon_counts(abc, expected):
    region = build_hexagon_region(*abc)
    assert count_matchings_exact(assemble(region)) == expected
    if expected <= 980:
        assert brute_count(region) == expected


def test_large_count_is_exact_integer():
    # MacMahon: prod (i + j + k - 1) / (i + j + k - 2) over the 6 x 6 x 6 box
    from fractions import Fraction
    n = 6
    expect = Fraction(1)
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            for k in range(1, n + 1):
                expect *= Fraction(i + j + k - 1, i + j + k - 2)
    got = count_matchings_exact(assemble(build_hexagon_region(n, n, n)))
    assert isinstance(got, int) and got == expect


def test_matrix_rows():
    system = assemble(build_hexagon_region(1, 1, 1))
    assert system.matrix.shape == (3, 3)
    region = system.region
    for w in region.whites:
        assert system.matrix[system.white_index[w]].sum() == len(region.white_neighbors[w])


def test_nonsquare():
    region = region_from_triangles({(0, 0), (1, 1)}, {(0, 0)})
    with pytest.raises(NonSquare):
        assemble(region)
    assert count_matchings(region) == 0


def test_singular():
    region = region_from_triangles({(0, 0), (1, 1), (2, 1), (2, 2)}, {(-1, -1), (-1, 0), (0, 0), (1, 1)})
    with pytest.raises(SingularMatrix):
        assemble(region).inverse


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_counts_match_enumeration(seed):
    region = random_triangle_region(np.random.default_rng(seed), 12)
    assert count_matchings(region) == brute_count(region)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.integers(-3, 3), min_size=5, max_size=5), min_size=5, max_size=5))
def test_bareiss_matches_float_determinant(rows):
    assert bareiss_determinant(rows) == round(np.linalg.det(np.array(rows, dtype=float)))


def test_unit_hexagon_inverse_entries():
    system = assemble(build_hexagon_region(1, 1, 1))
    for w, b, _ in system.region.edges:
        assert inverse_entry(system, b, w) == pytest.approx(0.5, abs=1e-12)


def test_inverse_identity():
    system = assemble(build_hexagon_region(3, 3, 3))
    assert np.abs(system.matrix @ system.inverse - np.eye(system.size)).max() < 1e-10
    # non-adjacent entries are finite
    assert np.all(np.isfinite(system.inverse))


def enumerated_edge_probs(region):
    ms = oracles.all_matchings(region.whites, region.blacks)
    return {(w, b): sum(m[w] == b for m in ms) / len(ms) for w, b, _ in region.edges}, ms


@pytest.mark.parametrize("abc", [(1, 1, 1), (2, 2, 2), (1, 2, 3)])
def test_edge_probabilities_match_enumeration(abc):
    region = build_hexagon_region(*abc)
    probs = edge_probabilities(assemble(region))
    expect, _ = enumerated_edge_probs(region)
    for e, p in expect.items():
        assert probs[e] == pytest.approx(p, abs=1e-12)


def test_black_sums():
    region = build_hexagon_region(3, 4, 2)
    probs = edge_probabilities(assemble(region))
    for b, ws in region.black_neighbors.items():
        assert sum(probs[(w, b)] for w in ws) == pytest.approx(1.0, abs=1e-10)
    assert all(-1e-12 <= p <= 1 + 1e-12 for p in probs.values())


def test_central_edge_of_large_hexagon():
    n = 12
    region = build_hexagon_region(n, n, n)
    probs = edge_probabilities(assemble(region))
    # the type-1 edge at the white nearest the centre
    centre = oracles.face_point((n, n))
    w = min(region.whites, key=lambda x: abs(oracles.white_point(x) - centre))
    assert probs[(w, w)] == pytest.approx(1 / 3, abs=0.02)


def test_joint_probabilities_match_enumeration():
    region = build_hexagon_region(2, 2, 2)
    system = assemble(region)
    ms = oracles.all_matchings(region.whites, region.blacks)
    edges = [(w, b) for w, b, _ in region.edges]
    for e, f in itertools.combinations(edges, 2):
        brute = sum(m[e[0]] == e[1] and m[f[0]] == f[1] for m in ms) / len(ms)
        assert joint_edge_probability(system, [e, f]) == pytest.approx(brute, abs=1e-12)


def test_joint_special_cases():
    region = build_hexagon_region(1, 1, 1)
    system = assemble(region)
    ms = oracles.all_matchings(region.whites, region.blacks)
    m = ms[0]
    alternating = sorted(m.items())[:2]
    assert joint_edge_probability(system, alternating) == pytest.approx(0.5, abs=1e-12)
    w, bs = next(iter(region.white_neighbors.items()))
    assert joint_edge_probability(system, [(w, bs[0]), (w, bs[1])]) == 0.0
    probs = edge_probabilities(system)
    for w, b, _ in region.edges:
        assert joint_edge_probability(system, [(w, b)]) == pytest.approx(probs[(w, b)], abs=1e-14)


def test_inclusion_exclusion():
    region = build_hexagon_region(2, 3, 2)
    system = assemble(region)
    probs = edge_probabilities(system)
    edges = [(w, b) for w, b, _ in region.edges]
    rng = np.random.default_rng(1)
    for _ in range(200):
        i, j = rng.choice(len(edges), 2, replace=False)
        e, f = edges[i], edges[j]
        assert probs[e] + probs[f] - joint_edge_probability(system, [e, f]) <= 1 + 1e-12


def test_column_cache_threadsafe():
    region = build_hexagon_region(4, 4, 4)
    system = assemble(region)
    ref = {w: np.array(system.inverse_column(w)) for w in region.white_list}
    fresh = assemble(region)
    errors = []

    def worker(offset):
        for w in region.white_list[offset::3] + region.white_list:
            if not np.allclose(fresh.inverse_column(w), ref[w], atol=1e-13):
                errors.append(w)

    threads = [threading.Thread(target=worker, args=(i,)) for i in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
