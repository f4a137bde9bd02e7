import math

import numpy as np
import pytest
from scipy import stats

import oracles
from dimerlab.errors import EmptyWindow, NoMatchingExists, ValidationError
from dimerlab.kasteleyn import assemble
from dimerlab.lattice import Matching, build_flat_disk_region, build_hexagon_region, region_from_triangles
from dimerlab.sampler import (
    empirical_lozenge_densities, initial_matching, sample_exact, sample_glauber, sample_many,
)


def is_perfect(m, region):
    nbrs = oracles.geometric_neighbors(region.whites, region.blacks)
    return (set(m.pairs) == set(region.whites)
            and sorted(m.pairs.values()) == sorted(region.blacks)
            and all(b in nbrs[w] for w, b in m.pairs.items()))


def test_every_draw_is_a_perfect_matching():
    region = build_flat_disk_region(5)
    system = assemble(region)
    for m in sample_many(system, 30, seed=4):
        assert is_perfect(m, region)


def test_fixed_seed_is_deterministic():
    system = assemble(build_hexagon_region(3, 3, 3))
    assert sample_exact(system, 99, 5).pairs == sample_exact(system, 99, 5).pairs
    draws = {sample_exact(system, 99, i).key() for i in range(10)}
    assert len(draws) > 1


def test_threads_do_not_change_output():
    system = assemble(build_hexagon_region(3, 3, 3))
    one = [m.key() for m in sample_many(system, 40, seed=2, threads=1)]
    four = [m.key() for m in sample_many(system, 40, seed=2, threads=4)]
    assert one == four


def test_block_size_does_not_change_output():
    system = assemble(build_hexagon_region(4, 4, 4))
    for i in range(10):
        assert sample_exact(system, 8, i, block=3).pairs == sample_exact(system, 8, i).pairs


def test_unit_hexagon_frequencies():
    region = build_hexagon_region(1, 1, 1)
    system = assemble(region)
    n = 20000
    draws = sample_many(system, n, seed=1)
    first = min(m.key() for m in draws)
    k = sum(m.key() == first for m in draws)
    sigma = math.sqrt(n * 0.25)
    assert abs(k - n / 2) < 3 * sigma


def test_small_hexagon_chi_square():
    region = build_hexagon_region(2, 2, 2)
    system = assemble(region)
    support = [tuple(sorted(m.items())) for m in oracles.all_matchings(region.whites, region.blacks)]
    index = {k: i for i, k in enumerate(support)}
    counts = np.zeros(len(support))
    for m in sample_many(system, 20000, seed=123):
        counts[index[m.key()]] += 1
    assert stats.chisquare(counts).pvalue > 1e-3


def test_initial_matching_and_errors():
    region = build_hexagon_region(3, 2, 4)
    assert is_perfect(initial_matching(region), region)
    with pytest.raises(NoMatchingExists):
        initial_matching(region_from_triangles({(0, 0), (1, 1)}, {(0, 0)}))
    with pytest.raises(NoMatchingExists):
        initial_matching(region_from_triangles({(0, 0), (1, 1), (2, 1), (2, 2)},
                                               {(-1, -1), (-1, 0), (0, 0), (1, 1)}))
    with pytest.raises(ValidationError):
        sample_glauber(region, 0, 0)


def test_glauber_keeps_valid_matchings_and_visits_both_states():
    region = build_hexagon_region(1, 1, 1)
    records = []
    sample_glauber(region, 3, 4000, record_every=1, records=records)
    assert all(is_perfect(m, region) for m in records)
    keys = [m.key() for m in records]
    assert len(set(keys)) == 2
    frac = keys.count(min(keys)) / len(keys)
    # consecutive records are correlated; a loose band still rules out a stuck chain
    assert 0.4 < frac < 0.6


def test_glauber_from_given_start():
    region = build_hexagon_region(2, 2, 2)
    start = initial_matching(region)
    end = sample_glauber(region, 1, 50, start=start)
    assert is_perfect(end, region)
    assert start.pairs == initial_matching(region).pairs  # start is not mutated


def test_whole_region_densities_are_thirds():
    region = build_hexagon_region(1, 1, 1)
    for m in oracles.all_matchings(region.whites, region.blacks):
        dens = empirical_lozenge_densities([Matching(m, region)], region.faces)
        assert dens == pytest.approx((1 / 3, 1 / 3, 1 / 3), abs=0)


def test_densities_sum_to_one():
    region = build_hexagon_region(3, 3, 3)
    m = sample_exact(assemble(region), 0)
    assert sum(empirical_lozenge_densities([m], region.faces)) == pytest.approx(1.0)


def test_empty_window():
    region = build_hexagon_region(2, 2, 2)
    m = initial_matching(region)
    with pytest.raises(EmptyWindow):
        empirical_lozenge_densities([m], [(1, 1)])
