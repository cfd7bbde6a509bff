#!/usr/bin/env python3

from fractions import Fraction

import pytest

from gaotour.decompose import (
    caratheodory_prune, decompose, default_epsilon, distribution_from_ensemble, exact_ensemble,
    is_spanning_tree, property_two_gap, round_distribution, snap_epsilon, verify_combination,
)
from gaotour.instance import random_metric
from gaotour.lp import solve_relaxation
from gaotour.models import DecompositionError, FractionalSolution, Instance, SolverError, TreeDistribution


def line_instance(n=4):
    return Instance(n, [[abs(i - j) for j in range(n)] for i in range(n)], 0, n - 1, name=f"line-{n}")


PATH = frozenset({0, 3, 5})       # 0-1-2-3
ZIGZAG = frozenset({1, 3, 4})     # 0-2-1-3


def test_spanning_tree_check():
    assert is_spanning_tree(PATH, 4)
    assert not is_spanning_tree({0, 1, 3}, 4)  # triangle 0-1-2 misses city 3
    assert not is_spanning_tree({0, 5}, 4)


def test_tree_indicator_gives_single_block():
    x = {e: Fraction(1) for e in PATH}
    dist = decompose(FractionalSolution(4, x, 3), s=0, t=3)
    assert dist.blocks == [(PATH, Fraction(1))]


def test_half_half_point():
    x = {e: Fraction(1, 2) for e in PATH ^ ZIGZAG}
    x[3] = Fraction(1)
    dist = decompose(FractionalSolution(4, x, 0), s=0, t=3)
    print(f"decomposition: {[(sorted(tree), str(w)) for tree, w in dist.blocks]}")
    assert len(dist) >= 2
    assert verify_combination(dist, x)
    assert dist.weight_sum() == 1


def test_wrong_total_is_rejected():
    x = {e: Fraction(1) for e in PATH}
    x[0] = Fraction(1, 2)
    with pytest.raises(DecompositionError):
        decompose(FractionalSolution(4, x, 0))


def test_verify_combination_detects_changes():
    x = {e: Fraction(1, 2) for e in PATH ^ ZIGZAG}
    x[3] = Fraction(1)
    good = TreeDistribution(4, [(PATH, Fraction(1, 2)), (ZIGZAG, Fraction(1, 2))])
    assert verify_combination(good, x)
    shifted = TreeDistribution(4, [(PATH, Fraction(1, 2) + Fraction(1, 1000)), (ZIGZAG, Fraction(1, 2))])
    assert not verify_combination(shifted, x)
    forest = TreeDistribution(4, [(frozenset({0, 5}), Fraction(1, 2)), (ZIGZAG, Fraction(1, 2))])
    assert not verify_combination(forest, x)


def test_caratheodory_prune_keeps_the_vector():
    dist = TreeDistribution(4, [(PATH, Fraction(1, 2)), (ZIGZAG, Fraction(1, 2))])
    pruned = TreeDistribution(4, caratheodory_prune(dist.blocks, 4))
    assert pruned.edge_vector() == dist.edge_vector()


@pytest.mark.parametrize("kind", ["euclidean", "graph-metric", "random-closure"])
def test_random_decompositions(kind):
    for seed in range(3):
        inst = random_metric(seed, 7, kind)
        solution = solve_relaxation(inst)
        dist = decompose(solution, inst.s, inst.t)
        assert verify_combination(dist, solution.x)
        assert len(dist) <= len(solution.x) + 1
        for tree, weight in dist.blocks:
            assert weight > 0
            assert is_spanning_tree(tree, inst.n)


def test_round_single_block():
    dist = TreeDistribution(4, [(PATH, Fraction(1))])
    ensemble = round_distribution(dist, Fraction(1, 64), 4)
    assert ensemble.r == 8192
    assert [b.count for b in ensemble.blocks] == [8192]
    assert ensemble.leftover.weight_sum() == 0
    assert ensemble.kept_mass == 1


def test_round_aligned_weights():
    dist = TreeDistribution(4, [(PATH, Fraction(2, 3)), (ZIGZAG, Fraction(1, 3))])
    ensemble = round_distribution(dist, Fraction(64, 3), 4)
    assert ensemble.r == 6
    assert [b.count for b in ensemble.blocks] == [4, 2]
    assert len(ensemble.leftover) == 0


def test_round_leftover_and_property_two():
    for seed in range(4):
        inst = random_metric(seed, 6, "random-closure")
        solution = solve_relaxation(inst)
        dist = decompose(solution, inst.s, inst.t)
        eps = default_epsilon(inst.n, target_r=2000)
        ensemble = round_distribution(dist, eps, inst.n, x_star=solution.x, s=inst.s, t=inst.t)
        assert ensemble.r % 2 == 0
        assert ensemble.leftover.weight_sum() <= ensemble.epsilon / inst.n
        assert ensemble.kept_mass + ensemble.leftover.weight_sum() == 1
        assert property_two_gap(ensemble.x, solution.x) <= ensemble.epsilon


def test_snap_epsilon():
    assert snap_epsilon(4, Fraction(1, 64)) == Fraction(1, 64)
    snapped = snap_epsilon(5, Fraction(1, 7))
    assert snapped <= Fraction(1, 7)
    assert (125 / snapped).denominator == 1
    with pytest.raises(ValueError):
        snap_epsilon(4, 0)


def test_round_rejects_too_coarse_epsilon():
    dist = TreeDistribution(4, [(PATH, Fraction(1, 2)), (ZIGZAG, Fraction(1, 2))])
    with pytest.raises(SolverError):
        round_distribution(dist, 1000, 4)


def test_exact_ensemble():
    dist = TreeDistribution(4, [(PATH, Fraction(1, 2)), (ZIGZAG, Fraction(1, 2))])
    ensemble = exact_ensemble(dist)
    assert ensemble.r == 4
    assert ensemble.epsilon == 0
    assert distribution_from_ensemble(ensemble).edge_vector() == dist.edge_vector()
    with pytest.raises(SolverError):
        exact_ensemble(TreeDistribution(4, [(PATH, Fraction(1, 3)), (ZIGZAG, Fraction(2, 3))]), max_r=4)
