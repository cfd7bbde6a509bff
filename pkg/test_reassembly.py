#!/usr/bin/env python3

from fractions import Fraction

import pytest

from gaotour.cuts import narrow_cuts
from gaotour.decompose import (
    decompose, default_epsilon, exact_ensemble, is_spanning_tree, round_distribution, tree_graph,
)
from gaotour.instance import random_metric
from gaotour.lp import solve_relaxation
from gaotour.models import (
    Block, ExchangeTrace, Instance, NarrowCutChain, RoundedEnsemble, SolverError, StructureViolation,
    edge_index,
)
from gaotour.reassembly import (
    cut_edges, exchange_for_connectivity, find_connected_partner, find_disjoint_partner,
    find_single_edge_partner, inner_count, is_global_gao_tree, isolate, reach, reassemble, replay_trace,
    theta_profile, tree_path, verify_structure,
)

PATH = frozenset({0, 3, 5})       # 0-1-2-3
ZIGZAG = frozenset({1, 3, 4})     # 0-2-1-3
STAR_AT_T = frozenset({2, 4, 5})  # 3 joined to 0, 1, 2


def chain_of(values):
    levels = [frozenset(range(i + 1)) for i in range(len(values))]
    return NarrowCutChain(levels, [Fraction(v) for v in values])


def pipeline(inst, target_r=400, epsilon=None):
    solution = solve_relaxation(inst)
    chain = narrow_cuts(solution, inst)
    dist = decompose(solution, inst.s, inst.t)
    if epsilon == 0:
        ensemble = exact_ensemble(dist, max_r=target_r)
    else:
        ensemble = round_distribution(dist, default_epsilon(inst.n, target_r), inst.n,
                                      x_star=solution.x, s=inst.s, t=inst.t)
    return solution, chain, ensemble


def test_theta_profile():
    profile = theta_profile(chain_of([1, Fraction(3, 2), 1]), 10, 0)
    assert profile.theta == [10, 5, 10]
    clamped = theta_profile(chain_of([1, Fraction(19, 10)]), 10, Fraction(1, 10))
    assert clamped.theta[1] == 0
    with pytest.raises(ValueError):
        theta_profile(chain_of([1]), 7, 0)


def test_isolate_splits_blocks():
    blocks = [Block(PATH, 3), Block(ZIGZAG, 2)]
    b = isolate(blocks, 2, 2)
    assert blocks[b].count == 2 and blocks[b].tree == PATH
    assert [block.count for block in blocks] == [1, 2, 2]
    with pytest.raises(StructureViolation):
        isolate(blocks, 3, 2)


def test_find_connected_partner():
    assert find_connected_partner([Block(PATH, 2)], 1, {0, 1}, 4) == 1
    assert find_connected_partner([Block(ZIGZAG, 2), Block(PATH, 3)], 1, {0, 1}, 4) == 3
    with pytest.raises(StructureViolation):
        find_connected_partner([Block(ZIGZAG, 2)], 1, {0, 1}, 4)


def test_find_disjoint_partner():
    blocks = [Block(PATH, 2), Block(ZIGZAG, 1), Block(PATH, 1)]
    assert find_disjoint_partner(blocks, 1, {0}, {0, 1}) == 3
    assert find_disjoint_partner(blocks, 1, {0}, {1}) == 2
    with pytest.raises(StructureViolation):
        find_disjoint_partner([Block(PATH, 4)], 1, {0}, {0, 1})


def test_find_single_edge_partner():
    cut = cut_edges({0, 1}, 4)
    assert len(PATH & cut) == 1 and len(ZIGZAG & cut) == 3
    assert find_single_edge_partner([Block(ZIGZAG, 3), Block(PATH, 1)], 2, cut) == 4
    with pytest.raises(StructureViolation):
        find_single_edge_partner([Block(ZIGZAG, 4)], 2, cut)


def test_exchange_on_star():
    e, f = exchange_for_connectivity(STAR_AT_T, PATH, {0, 1}, {0, 1}, 4)
    print(f"exchange on the star: e={e}, f={f}")
    assert (e, f) == (2, 0)
    new_j = (STAR_AT_T - {e}) | {f}
    assert is_spanning_tree(new_j, 4)
    assert is_spanning_tree((PATH - {f}) | {e}, 4)
    assert inner_count(new_j, {0, 1}, 4) == inner_count(STAR_AT_T, {0, 1}, 4) + 1


def test_exchange_precondition():
    with pytest.raises(StructureViolation):
        exchange_for_connectivity(PATH, PATH, {0, 1}, {0, 1}, 4)


def test_integral_ensemble_is_untouched():
    inst = Instance(4, [[abs(i - j) for j in range(4)] for i in range(4)], 0, 3)
    solution, chain, ensemble = pipeline(inst)
    profile = theta_profile(chain, ensemble.r, ensemble.epsilon)
    after, trace = reassemble(ensemble, chain, profile)
    assert len(trace) == 0
    assert after.canonical() == ensemble.canonical()
    assert is_global_gao_tree(after.blocks[0].tree, chain, 4)


@pytest.mark.parametrize("kind", ["euclidean", "graph-metric", "random-closure"])
def test_random_reassembly_keeps_vector_and_prefix(kind):
    for seed in range(4):
        inst = random_metric(seed, 7, kind)
        solution, chain, ensemble = pipeline(inst)
        profile = theta_profile(chain, ensemble.r, ensemble.epsilon)
        after, trace = reassemble(ensemble, chain, profile)
        print(f"{inst.name}: r={ensemble.r}, ell={chain.ell}, {len(trace)} exchanges")
        assert verify_structure(ensemble, after, chain, profile) == []
        assert after.counts_vector() == ensemble.counts_vector()
        assert replay_trace(ensemble, trace).canonical() == after.canonical()
        again = ExchangeTrace.from_jsonl(trace.to_jsonl())
        assert [r.dict() for r in again.records] == [r.dict() for r in trace.records]
        assert trace.peak_blocks >= len(ensemble.blocks)


def test_reassembly_is_deterministic():
    inst = random_metric(11, 7, "random-closure")
    solution, chain, ensemble = pipeline(inst)
    profile = theta_profile(chain, ensemble.r, ensemble.epsilon)
    first, trace_a = reassemble(ensemble, chain, profile)
    second, trace_b = reassemble(ensemble, chain, profile)
    assert first.canonical() == second.canonical()
    assert trace_a.to_jsonl() == trace_b.to_jsonl()


def test_exact_ensembles_start_with_a_global_gao_tree():
    checked = 0
    for seed in range(30):
        inst = random_metric(seed, 6, "graph-metric")
        try:
            solution, chain, ensemble = pipeline(inst, target_r=2000, epsilon=0)
        except SolverError:
            continue
        profile = theta_profile(chain, ensemble.r, 0)
        after, _ = reassemble(ensemble, chain, profile)
        assert is_global_gao_tree(after.blocks[0].tree, chain, inst.n)
        checked += 1
    print(f"checked {checked} exact ensembles")
    assert checked > 0


def test_verifier_spots_a_changed_tree():
    inst = random_metric(3, 7, "random-closure")
    solution, chain, ensemble = pipeline(inst)
    profile = theta_profile(chain, ensemble.r, ensemble.epsilon)
    after, _ = reassemble(ensemble, chain, profile)
    broken = after.copy()
    tree = broken.blocks[0].tree
    missing = next(e for e in range(inst.num_edges) if e not in tree)
    broken.blocks[0].tree = (tree - {min(tree)}) | {missing}
    assert verify_structure(ensemble, broken, chain, profile)


def test_replay_rejects_foreign_record():
    blocks = [Block(PATH, 2), Block(ZIGZAG, 2)]
    ensemble = RoundedEnsemble(4, blocks, 4, 0)
    bogus = ExchangeTrace.from_jsonl('{"j": 1, "k": 3, "count": 1, "cut": 1, "e": 1, "f": 0, '
                                     '"rule": "single-edge"}\n')
    with pytest.raises(StructureViolation):
        replay_trace(ensemble, bogus)


def test_tree_helpers_use_the_tree_graph():
    graph = tree_graph(PATH, 4, blocked={3})
    assert sorted(graph.nodes) == [0, 1, 2, 3]
    assert sorted(data["id"] for _, _, data in graph.edges(data=True)) == [0, 5]
    assert tree_path(PATH, 0, 3, 4) == [0, 3, 5]
    assert tree_path(ZIGZAG, 3, 0, 4) == [4, 3, 1]
    assert reach(PATH, 0, 4, blocked={3}) == {0, 1}
    assert reach(STAR_AT_T, 1, 4) == {0, 1, 2, 3}
    assert not is_spanning_tree(frozenset({0, 1, 3}), 4)
    assert not is_spanning_tree(frozenset({0, 5}), 4)
    assert not is_spanning_tree([0, 0, 3], 4)
    with pytest.raises(StructureViolation):
        tree_path(frozenset({0, 5}), 0, 3, 4)


def edges(n, *pairs):
    return frozenset(edge_index(u, v, n) for u, v in pairs)


def run_fixture(n, blocks, levels, values, r, epsilon=0):
    """Reassemble a hand-built ensemble; values are the ensemble's own cut values."""
    chain = NarrowCutChain([frozenset(level) for level in levels], [Fraction(v) for v in values])
    ensemble = RoundedEnsemble(n, blocks, r, epsilon)
    profile = theta_profile(chain, r, ensemble.epsilon)
    after, trace = reassemble(ensemble, chain, profile)
    for record in trace.records:
        print(record.dict())
    assert verify_structure(ensemble, after, chain, profile) == []
    assert after.counts_vector() == ensemble.counts_vector()
    assert replay_trace(ensemble, trace).canonical() == after.canonical()
    return chain, ensemble, after, trace


def records(trace):
    return [(r.j, r.k, r.count, r.cut, r.e, r.f, r.rule) for r in trace.records]


def level_fixture():
    # x = 1/3 zigzag + 2/3 path; x(C_1) = 5/3
    return run_fixture(4, [Block(ZIGZAG, 2), Block(PATH, 4)], [{0}, {0, 1}, {0, 1, 2}],
                       [1, Fraction(5, 3), 1], 6)


def star_fixture():
    star = edges(5, (0, 1), (1, 2), (1, 3), (1, 4))
    path = edges(5, (0, 1), (1, 2), (2, 3), (3, 4))
    return run_fixture(5, [Block(star, 1), Block(path, 3)], [{0}, {0, 1}, {0, 1, 2}, {0, 1, 2, 3}],
                       [1, Fraction(3, 2), Fraction(5, 4), 1], 4)


def ring_fixture():
    first = edges(6, (0, 1), (1, 3), (2, 3), (2, 4), (4, 5))
    second = edges(6, (0, 2), (1, 2), (1, 3), (3, 4), (4, 5))
    path = edges(6, (0, 1), (1, 2), (2, 3), (3, 4), (4, 5))
    return run_fixture(6, [Block(first, 1), Block(second, 2), Block(path, 1)],
                       [{0}, {0, 1, 2}, {0, 1, 2, 3}, {0, 1, 2, 3, 4}], [1, Fraction(3, 2), 1, 1], 4)


def band_fixture():
    # eps = 1/2 leaves only the first tree active on both inner cuts
    head = edges(6, (0, 1), (1, 4), (2, 3), (3, 4), (4, 5))
    bridge = edges(6, (0, 1), (1, 2), (2, 3), (1, 4), (4, 5))
    detour = edges(6, (0, 1), (1, 3), (2, 3), (2, 4), (4, 5))
    return run_fixture(6, [Block(head, 1), Block(bridge, 1), Block(detour, 2)],
                       [{0}, {0, 1}, {0, 1, 2, 3}, {0, 1, 2, 3, 4}], [1, Fraction(5, 4), Fraction(5, 4), 1], 4,
                       epsilon=Fraction(1, 2))


def test_level_exchange_connects_the_first_level():
    chain, ensemble, after, trace = level_fixture()
    assert records(trace) == [(1, 3, 2, 1, edge_index(0, 2, 4), edge_index(0, 1, 4), "connected-level"),
                              (1, 5, 2, 1, edge_index(1, 3, 4), edge_index(2, 3, 4), "single-edge")]
    connected = replay_trace(ensemble, ExchangeTrace(trace.records[:1]))
    assert connected.blocks[0].count == 2
    assert inner_count(connected.blocks[0].tree, {0, 1}, 4) == 1
    assert [(b.tree, b.count) for b in after.blocks] == [(PATH, 2), (frozenset({1, 3, 5}), 2),
                                                         (frozenset({0, 3, 4}), 2)]
    assert is_global_gao_tree(after.blocks[0].tree, chain, 4)


def test_three_crossings_take_two_single_edge_steps():
    chain, ensemble, after, trace = star_fixture()
    assert len(ensemble.blocks[0].tree & cut_edges({0, 1}, 5)) == 3
    assert records(trace) == [(1, 3, 1, 1, edge_index(1, 3, 5), edge_index(2, 3, 5), "single-edge"),
                              (1, 4, 1, 1, edge_index(1, 4, 5), edge_index(3, 4, 5), "single-edge")]
    assert [(b.tree, b.count) for b in after.blocks] == [
        (edges(5, (0, 1), (1, 2), (2, 3), (3, 4)), 2),
        (edges(5, (0, 1), (1, 2), (1, 3), (3, 4)), 1),
        (edges(5, (0, 1), (1, 2), (1, 4), (2, 3)), 1),
    ]
    assert is_global_gao_tree(after.blocks[0].tree, chain, 5)


def test_ring_exchanges_on_a_fractional_cut():
    chain, ensemble, after, trace = ring_fixture()
    assert records(trace) == [(1, 2, 1, 1, edge_index(2, 3, 6), edge_index(1, 2, 6), "connected-ring"),
                              (1, 3, 1, 1, edge_index(2, 4, 6), edge_index(3, 4, 6), "single-edge"),
                              (2, 3, 1, 1, edge_index(2, 3, 6), edge_index(1, 2, 6), "connected-ring")]
    assert after.blocks[0].tree == edges(6, (0, 1), (1, 2), (1, 3), (3, 4), (4, 5))
    assert after.blocks[2].tree == edges(6, (0, 2), (1, 3), (2, 3), (2, 4), (4, 5))
    assert is_global_gao_tree(after.blocks[0].tree, chain, 6)


def test_band_exchange_then_rejoin_restores_the_lower_cut():
    chain, ensemble, after, trace = band_fixture()
    lower = cut_edges({0, 1}, 6)
    assert records(trace) == [(1, 2, 1, 2, edge_index(3, 4, 6), edge_index(1, 2, 6), "connected-band"),
                              (1, 3, 1, 2, edge_index(1, 4, 6), edge_index(2, 4, 6), "connected-rejoin")]

    banded = replay_trace(ensemble, ExchangeTrace(trace.records[:1]))
    assert inner_count(banded.blocks[0].tree, {0, 1, 2, 3}, 6) == 3
    assert len(banded.blocks[0].tree & lower) == 2

    first = after.blocks[0].tree
    assert first == edges(6, (0, 1), (1, 2), (2, 3), (2, 4), (4, 5))
    assert len(first & lower) == 1
    assert len(first & cut_edges({0, 1, 2, 3}, 6)) == 1


def test_fixtures_cover_every_exchange_rule():
    rules = set()
    for fixture in (level_fixture, star_fixture, ring_fixture, band_fixture):
        rules |= {record.rule for record in fixture()[3].records}
    assert rules == {"connected-ring", "connected-band", "connected-level", "connected-rejoin", "single-edge"}
