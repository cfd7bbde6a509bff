#!/usr/bin/env python3

from fractions import Fraction

import numpy as np
import pytest

from gaotour.instance import random_metric
from gaotour.models import Instance, ParityTarget, SolverError
from gaotour.parity import (
    assemble_tour, brute_force_tjoin, correct_tree, correct_trees, euler_walk, min_tjoin,
    tjoin_by_subsets, wrong_parity_set,
)

PATH = frozenset({0, 3, 5})       # 0-1-2-3
STAR_AT_1 = frozenset({0, 3, 4})  # 1 joined to 0, 2, 3


def line_instance(n=4):
    return Instance(n, [[abs(i - j) for j in range(n)] for i in range(n)], 0, n - 1, name=f"line-{n}")


def random_tree(rng, n):
    """Random labelled spanning tree as edge ids (attach every city to an earlier one)."""
    order = [int(v) for v in rng.permutation(n)]
    inst_ids = []
    for i in range(1, n):
        u, v = sorted((order[i], order[int(rng.integers(0, i))]))
        inst_ids.append(u * (2 * n - u - 1) // 2 + (v - u - 1))
    return frozenset(inst_ids)


def test_wrong_parity_sets():
    assert len(wrong_parity_set(PATH, 0, 3, 4)) == 0
    assert wrong_parity_set(STAR_AT_1, 0, 3, 4).cities == frozenset({1, 2})
    with pytest.raises(ValueError):
        ParityTarget({1, 2, 3})


def test_wrong_parity_set_is_even_for_random_trees():
    rng = np.random.default_rng(4)
    for _ in range(50):
        n = int(rng.integers(2, 10))
        assert len(wrong_parity_set(random_tree(rng, n), 0, n - 1, n)) % 2 == 0


def test_min_tjoin_small_targets():
    inst = line_instance(4)
    assert min_tjoin(inst, []) == ([], 0)
    assert min_tjoin(inst, {1, 3}) == ([inst.edge_id(1, 3)], 2)
    with pytest.raises(ValueError):
        min_tjoin(inst, {1, 2, 3})


def test_matching_dp_agrees_with_enumeration():
    rng = np.random.default_rng(17)
    for seed in range(100):
        inst = random_metric(seed, 8, ["euclidean", "graph-metric", "random-closure"][seed % 3])
        size = 2 * int(rng.integers(0, 5))
        target = [int(v) for v in rng.choice(8, size=size, replace=False)]
        join, cost = min_tjoin(inst, target)
        _, expected = brute_force_tjoin(inst, target)
        assert cost == expected
        assert inst.edge_set_cost(join) == cost


def test_matching_equals_general_tjoin_on_four_cities():
    inst = random_metric(2, 4, "random-closure")
    for target in ([0, 1], [1, 3], [0, 1, 2, 3]):
        assert min_tjoin(inst, target)[1] == tjoin_by_subsets(inst, target)


def test_matching_is_invariant_under_target_order():
    inst = random_metric(9, 8, "random-closure")
    assert min_tjoin(inst, [6, 1, 4, 3])[1] == min_tjoin(inst, [1, 3, 4, 6])[1]


def test_euler_walk_visits_every_edge():
    edges = [0, 3, 4, 3]  # 0-1, 1-2, 1-3, 1-2 again
    walk = euler_walk(edges, 0, 4)
    print(f"walk: {walk}")
    assert walk[0] == 0 and walk[-1] == 3
    assert len(walk) == len(edges) + 1


def test_assemble_path_is_identity():
    inst = line_instance(4)
    candidate = assemble_tour(inst, PATH, [])
    assert candidate.path.order == [0, 1, 2, 3]
    assert candidate.cost == 3


def test_assemble_star_with_join():
    inst = line_instance(4)
    join, join_cost = min_tjoin(inst, wrong_parity_set(STAR_AT_1, 0, 3, 4))
    candidate = assemble_tour(inst, STAR_AT_1, join)
    print(f"star tour: {candidate.path.order}, cost {candidate.cost}")
    assert sorted(candidate.path.order) == [0, 1, 2, 3]
    assert candidate.path.order[0] == 0 and candidate.path.order[-1] == 3
    assert candidate.cost <= candidate.tree_cost + join_cost


def test_assemble_rejects_bad_multigraphs():
    inst = line_instance(4)
    with pytest.raises(SolverError):
        assemble_tour(inst, frozenset({0}), [])
    with pytest.raises(SolverError):
        assemble_tour(inst, STAR_AT_1, [])


def test_correct_trees_on_random_trees():
    rng = np.random.default_rng(8)
    inst = random_metric(8, 8, "euclidean")
    trees = [random_tree(rng, 8) for _ in range(6)]
    candidates = correct_trees(inst, [(tree, "reassembled", f"block-{i}") for i, tree in enumerate(trees)])
    for tree, candidate in zip(trees, candidates):
        assert candidate.tree == tree
        assert sorted(candidate.path.order) == list(range(8))
        assert candidate.path.order[0] == inst.s and candidate.path.order[-1] == inst.t
        assert candidate.cost <= candidate.tree_cost + candidate.join_cost
        assert candidate.dict()["label"] == candidate.label
    assert correct_tree(inst, trees[0]).cost == candidates[0].cost
