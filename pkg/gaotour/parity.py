"""Parity correction: wrong-parity sets, minimum T-joins, {s,t}-tours and shortcutting."""

import logging
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from functools import lru_cache

import networkx as nx

from gaotour.models import HamPath, ParityTarget, SolverError, TourCandidate, edge_table

logger = logging.getLogger(__name__)


def wrong_parity_set(tree, s, t, n):
    """Cities with even degree among {s, t} or odd degree elsewhere."""
    degree = [0] * n
    for e in tree:
        u, v = edge_table(n)[e]
        degree[u] += 1
        degree[v] += 1
    return ParityTarget(v for v in range(n) if (degree[v] % 2 == 0) == (v in (s, t)))


def min_tjoin(inst, target, max_t=22):
    """Minimum-cost perfect matching on T, a minimum T-join in a complete metric graph."""
    cities = sorted(target)
    k = len(cities)
    if k % 2:
        raise ValueError(f"T-join needs |T| even, got {k}")
    if k > max_t:
        raise ValueError(f"|T| = {k} exceeds the matching cap {max_t}")
    if k == 0:
        return [], Fraction(0)
    full = (1 << k) - 1
    cost = [[inst.exact_edge_cost(inst.edge_id(a, b)) if a != b else Fraction(0) for b in cities] for a in cities]

    @lru_cache(maxsize=None)
    def best(mask):
        if mask == full:
            return Fraction(0), None
        i = next(b for b in range(k) if not mask >> b & 1)
        choice = None
        for j in range(i + 1, k):
            if mask >> j & 1:
                continue
            sub, _ = best(mask | 1 << i | 1 << j)
            value = cost[i][j] + sub
            if choice is None or value < choice[0]:
                choice = (value, j)
        return choice

    join, mask = [], 0
    total, _ = best(0)
    while mask != full:
        i = next(b for b in range(k) if not mask >> b & 1)
        _, j = best(mask)
        join.append(inst.edge_id(cities[i], cities[j]))
        mask |= 1 << i | 1 << j
    best.cache_clear()
    return sorted(join), total


def brute_force_tjoin(inst, target, max_t=8):
    """Minimum perfect matching on T by enumerating every matching."""
    cities = sorted(target)
    if len(cities) % 2:
        raise ValueError(f"T-join needs |T| even, got {len(cities)}")
    if len(cities) > max_t:
        raise ValueError(f"|T| = {len(cities)} exceeds the enumeration cap {max_t}")

    def matchings(rest):
        if not rest:
            yield []
            return
        a = rest[0]
        for idx in range(1, len(rest)):
            b = rest[idx]
            for tail in matchings(rest[1:idx] + rest[idx + 1:]):
                yield [inst.edge_id(a, b)] + tail

    best_join, best_cost = None, None
    for join in matchings(cities):
        value = inst.edge_set_cost(join)
        if best_cost is None or value < best_cost:
            best_join, best_cost = sorted(join), value
    return best_join, best_cost


def tjoin_by_subsets(inst, target, max_edges=15):
    """Minimum T-join over all edge subsets of the complete graph (tiny n only)."""
    m = inst.num_edges
    if m > max_edges:
        raise ValueError(f"{m} edges exceed the subset enumeration cap {max_edges}")
    target = frozenset(target)
    table = edge_table(inst.n)
    best = None
    for mask in range(1 << m):
        odd = set()
        for e in range(m):
            if mask >> e & 1:
                odd ^= set(table[e])
        if odd == target:
            value = inst.edge_set_cost(e for e in range(m) if mask >> e & 1)
            if best is None or value < best:
                best = value
    return best


def euler_walk(edges, start, n):
    """Hierholzer's walk over a multigraph given as an edge-id list, lowest edge id first."""
    table = edge_table(n)
    adj = {}
    for slot, e in enumerate(edges):
        u, v = table[e]
        adj.setdefault(u, []).append((e, slot, v))
        adj.setdefault(v, []).append((e, slot, u))
    for v in adj:
        adj[v].sort()
    pointer = {v: 0 for v in adj}
    used = [False] * len(edges)
    stack, walk = [start], []
    while stack:
        v = stack[-1]
        options = adj.get(v, [])
        while pointer.get(v, 0) < len(options) and used[options[pointer[v]][1]]:
            pointer[v] += 1
        if pointer.get(v, 0) < len(options):
            _, slot, w = options[pointer[v]]
            used[slot] = True
            stack.append(w)
        else:
            walk.append(stack.pop())
    walk.reverse()
    return walk


def assemble_tour(inst, tree, join, source="reassembled", label=None):
    """Shortcut the Euler walk of tree + join into a Hamiltonian s-t path."""
    n, s, t = inst.n, inst.s, inst.t
    table = edge_table(n)
    graph = nx.MultiGraph()
    graph.add_nodes_from(range(n))
    edges = sorted(tree) + sorted(join)
    graph.add_edges_from(table[e] for e in edges)
    if not nx.is_connected(graph):
        raise SolverError("tree + join is disconnected", stage="parity")
    odd = {v for v, d in graph.degree() if d % 2}
    if odd != {s, t}:
        raise SolverError(f"odd-degree cities are {sorted(odd)}, expected {[s, t]}", stage="parity")

    walk = euler_walk(edges, s, n)
    if walk[0] != s or walk[-1] != t:
        raise SolverError(f"Euler walk runs {walk[0]} -> {walk[-1]}, expected {s} -> {t}", stage="parity")
    order, seen = [], set()
    for v in walk:
        if v not in seen and v != t:
            seen.add(v)
            order.append(v)
    order.append(t)

    path_cost = sum((inst.exact_edge_cost(inst.edge_id(a, b)) for a, b in zip(order, order[1:])), Fraction(0))
    tree_cost = inst.edge_set_cost(tree)
    join_cost = inst.edge_set_cost(join)
    if path_cost > tree_cost + join_cost:
        raise SolverError(f"shortcut path costs {path_cost} > {tree_cost + join_cost}", stage="parity")
    return TourCandidate(tree, join, HamPath(order, path_cost), tree_cost, join_cost, source=source, label=label)


def correct_tree(inst, tree, source="reassembled", label=None, max_t=22):
    target = wrong_parity_set(tree, inst.s, inst.t, inst.n)
    join, _ = min_tjoin(inst, target, max_t=max_t)
    return assemble_tour(inst, tree, join, source=source, label=label)


def _correct(args):
    return correct_tree(*args)


def correct_trees(inst, items, workers=1, max_t=22):
    """One tour candidate per (tree, source, label); candidates are independent."""
    jobs = [(inst, tree, source, label, max_t) for tree, source, label in items]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            candidates = list(pool.map(_correct, jobs))
    else:
        candidates = [_correct(job) for job in jobs]
    logger.info(f"Parity correction produced {len(candidates)} candidates")
    return candidates
