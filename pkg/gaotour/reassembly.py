"""Reassembly of a rounded tree ensemble into prefix-local Gao trees.

The r virtual trees S_1..S_r live in blocks of identical copies. Trees are
scanned in index order; for every inner narrow cut C_i with j <= theta_i the
tree at j is first made connected on U_i and then reduced to a single C_i
edge. Every change is an exchange S_j - e + f, S_k + e - f with a partner at a
later index, so the edge vector (1/r) sum chi^S_j never changes.
"""

import logging
import math

import networkx as nx

from gaotour.decompose import is_spanning_tree, tree_graph
from gaotour.models import (
    Block, ExchangeTrace, RoundedEnsemble, StructureViolation, SwapRecord, ThetaProfile, edge_table,
    tree_key,
)

logger = logging.getLogger(__name__)


def theta_profile(chain, r, epsilon):
    """theta_i = max(0, ceil(r (2 - x*(C_i) - eps))) for every level of the chain."""
    if r <= 0 or r % 2:
        raise ValueError(f"r must be a positive even integer, got {r}")
    if epsilon < 0:
        raise ValueError(f"epsilon must be nonnegative, got {epsilon}")
    theta = [max(0, math.ceil(r * (2 - value - epsilon))) for value in chain.values]
    return ThetaProfile(theta, r, epsilon)


# ---------------------------------------------------------------------------
# Tree helpers
# ---------------------------------------------------------------------------

def cut_edges(cities, n):
    return frozenset(e for e, (u, v) in enumerate(edge_table(n)) if (u in cities) != (v in cities))


def inner_count(tree, cities, n):
    table = edge_table(n)
    return sum(1 for e in tree if table[e][0] in cities and table[e][1] in cities)


def induced_connected(tree, cities, n):
    """(V, tree)[cities] is connected; induced subgraphs of a tree are forests."""
    return len(cities) <= 1 or inner_count(tree, cities, n) == len(cities) - 1


def reach(tree, start, n, blocked=frozenset()):
    """Cities reachable from start in (V, tree - blocked)."""
    return nx.node_connected_component(tree_graph(tree, n, blocked), start)


def tree_path(tree, a, b, n):
    """Edges of the a-b path in a tree, listed from a to b."""
    graph = tree_graph(tree, n)
    try:
        nodes = nx.shortest_path(graph, a, b)
    except nx.NetworkXNoPath:
        raise StructureViolation(f"No path between {a} and {b} in tree {tree_key(tree)}", stage="reassemble")
    return [graph.edges[u, v]["id"] for u, v in zip(nodes, nodes[1:])]


def _crosses(e, cities, n):
    u, v = edge_table(n)[e]
    return (u in cities) != (v in cities)


def is_global_gao_tree(tree, chain, n):
    """Exactly one edge in every narrow cut."""
    return all(len(tree & cut_edges(level, n)) == 1 for level in chain.levels)


# ---------------------------------------------------------------------------
# Virtual index bookkeeping
# ---------------------------------------------------------------------------

def locate(blocks, j):
    """(list index, first virtual index) of the block holding virtual index j."""
    start = 1
    for b, block in enumerate(blocks):
        if j < start + block.count:
            return b, start
        start += block.count
    raise StructureViolation(f"Virtual index {j} is past the end of the ensemble", stage="reassemble")


def split_at(blocks, v):
    """Make a block start at virtual index v; returns its list index."""
    start = 1
    for b, block in enumerate(blocks):
        if v == start:
            return b
        if v < start + block.count:
            head = v - start
            blocks[b:b + 1] = [Block(block.tree, head), Block(block.tree, block.count - head)]
            return b + 1
        start += block.count
    return len(blocks)


def isolate(blocks, j, count):
    """One block holding exactly the identical copies j..j+count-1."""
    first = split_at(blocks, j)
    last = split_at(blocks, j + count)
    run = blocks[first:last]
    tree = run[0].tree
    if any(block.tree != tree for block in run):
        raise StructureViolation(f"Copies {j}..{j + count - 1} are not identical", stage="reassemble")
    if len(run) > 1:
        blocks[first:last] = [Block(tree, count)]
    return first


def _find(blocks, bound, predicate):
    start = 1
    for block in blocks:
        end = start + block.count - 1
        if end >= bound and predicate(block.tree):
            return max(start, bound)
        start = end + 1
    return None


def find_connected_partner(blocks, j, cities, n):
    """Smallest k >= j whose tree is connected on the given cities."""
    cities = frozenset(cities)
    k = _find(blocks, j, lambda tree: induced_connected(tree, cities, n))
    if k is None:
        raise StructureViolation(f"structure violation: no tree at index >= {j} is connected on "
                                 f"{sorted(cities)}; the rounded vector is off", stage="reassemble")
    return k


def find_disjoint_partner(blocks, j, cut_h, cut_i):
    """Smallest k > j whose tree avoids C_h & C_i."""
    shared = cut_h & cut_i
    k = _find(blocks, j + 1, lambda tree: not (tree & shared))
    if k is None:
        raise StructureViolation(f"structure violation: every tree after {j} meets C_h & C_i",
                                 stage="reassemble")
    return k


def find_single_edge_partner(blocks, theta_i, cut_i):
    """Smallest k > theta_i whose tree has exactly one C_i edge."""
    k = _find(blocks, theta_i + 1, lambda tree: len(tree & cut_i) == 1)
    if k is None:
        raise StructureViolation(f"structure violation: no tree after index {theta_i} has a single edge "
                                 f"in the cut", stage="reassemble")
    return k


# ---------------------------------------------------------------------------
# Exchanges
# ---------------------------------------------------------------------------

def exchange_for_connectivity(tree_j, tree_k, level, cities, n):
    """Exchange pair (e, f) that raises the connectivity of tree_j on cities.

    Requires tree_j[M] disconnected, tree_k[M] connected, M inside U_i and at
    most one tree_j edge leaving U_i - M. Returns e in tree_j outside E[U_i]
    and f in tree_k inside E[M] such that both exchanged sets stay spanning trees.
    """
    table = edge_table(n)
    level, cities = frozenset(level), frozenset(cities)
    if not cities <= level:
        raise StructureViolation("exchange precondition: M is not inside U_i", stage="reassemble")
    if induced_connected(tree_j, cities, n):
        raise StructureViolation("exchange precondition: tree_j is already connected on M", stage="reassemble")
    if not induced_connected(tree_k, cities, n):
        raise StructureViolation("exchange precondition: tree_k is not connected on M", stage="reassemble")
    if len(tree_j & cut_edges(level - cities, n)) > 1:
        raise StructureViolation("exchange precondition: tree_j leaves U_i - M more than once",
                                 stage="reassemble")

    # components A_p of tree_j[M]
    inner = frozenset(e for e in tree_j if table[e][0] in cities and table[e][1] in cities)
    a_label = {}
    for v in sorted(cities):
        if v not in a_label:
            for w in reach(inner, v, n):
                a_label[w] = v
    between = frozenset(e for e in tree_k
                        if table[e][0] in cities and table[e][1] in cities
                        and a_label[table[e][0]] != a_label[table[e][1]])

    # B_p: everything reachable from A_p in tree_k - F
    b_label = {}
    for v in sorted(cities):
        component = reach(tree_k, v, n, blocked=between)
        labels = {a_label[w] for w in component if w in cities}
        if len(labels) != 1:
            raise StructureViolation("B sets do not partition V", stage="reassemble")
        for w in component:
            b_label[w] = a_label[v]
    if len(b_label) != n:
        raise StructureViolation("B sets do not cover V", stage="reassemble")

    # Y: union of tree_j paths between cities of M
    steiner = set(tree_j)
    while True:
        degree = {}
        for e in steiner:
            for v in table[e]:
                degree[v] = degree.get(v, 0) + 1
        leaves = {e for e in steiner if any(degree[v] == 1 and v not in cities for v in table[e])}
        if not leaves:
            break
        steiner -= leaves

    root = min(v for e in steiner for v in table[e])
    depth = {root: 0}
    queue = [root]
    adj = {}
    for e in steiner:
        u, v = table[e]
        adj.setdefault(u, []).append(v)
        adj.setdefault(v, []).append(u)
    for u in queue:
        for v in adj[u]:
            if v not in depth:
                depth[v] = depth[u] + 1
                queue.append(v)

    candidates = [e for e in steiner if b_label[table[e][0]] != b_label[table[e][1]]]
    if not candidates:
        raise StructureViolation("no Y edge crosses the B partition", stage="reassemble")
    e = min(candidates, key=lambda c: (-max(depth[table[c][0]], depth[table[c][1]]), c))
    u, v = table[e]
    deep, shallow = (u, v) if depth[u] > depth[v] else (v, u)
    side = b_label[deep]

    f = None
    for g in tree_path(tree_k, deep, shallow, n):
        a, b = table[g]
        if (b_label[a] == side) != (b_label[b] == side):
            f = g
            break
    if f is None:
        raise StructureViolation("no exchange edge on the tree_k path", stage="reassemble")

    new_j, new_k = (tree_j - {e}) | {f}, (tree_k - {f}) | {e}
    if not (is_spanning_tree(new_j, n) and is_spanning_tree(new_k, n)):
        raise StructureViolation(f"exchange ({e}, {f}) does not keep both trees spanning", stage="reassemble")
    if set(table[e]) <= level or not set(table[f]) <= cities:
        raise StructureViolation(f"exchange ({e}, {f}) violates e outside E[U_i], f inside E[M]",
                                 stage="reassemble")
    return e, f


class Reassembler:
    """Scans virtual indices and enforces local Gao trees cut by cut."""

    def __init__(self, ensemble, chain, profile):
        self.n = ensemble.n
        self.r = ensemble.r
        self.blocks = [block.copy() for block in ensemble.blocks]
        self.levels = chain.levels
        self.ell = chain.ell
        self.theta = profile.theta
        self.cuts = [cut_edges(level, self.n) for level in self.levels]
        self.cap = self.n ** 3
        self.trace = ExchangeTrace()
        self.trace.peak_blocks = len(self.blocks)
        self.j = None
        self.count = 0

    def _fail(self, message):
        return StructureViolation(message, trace=self.trace, stage="reassemble",
                                  payload={"j": self.j, "swaps": len(self.trace)})

    @property
    def head(self):
        return self.blocks[split_at(self.blocks, self.j)].tree

    def tree_at(self, k):
        b, _ = locate(self.blocks, k)
        return self.blocks[b].tree

    def _previous_active(self, i):
        """Largest h < i with j <= theta_h."""
        for h in range(i - 1, -1, -1):
            if self.j <= self.theta[h]:
                return h
        return None

    def _swap(self, k, e, f, cut, rule):
        if k < self.j + self.count:
            raise self._fail(f"partner {k} lies inside the block being processed at {self.j}")
        b, start = locate(self.blocks, k)
        count = min(self.count, start + self.blocks[b].count - k)
        head = isolate(self.blocks, self.j, count)
        partner = isolate(self.blocks, k, count)
        tree_j, tree_k = self.blocks[head].tree, self.blocks[partner].tree
        if e not in tree_j or f in tree_j or f not in tree_k or e in tree_k:
            raise self._fail(f"exchange ({e}, {f}) does not match trees at {self.j} and {k}")
        self.blocks[head].tree = (tree_j - {e}) | {f}
        self.blocks[partner].tree = (tree_k - {f}) | {e}
        if not (is_spanning_tree(self.blocks[head].tree, self.n)
                and is_spanning_tree(self.blocks[partner].tree, self.n)):
            raise self._fail(f"exchange ({e}, {f}) at ({self.j}, {k}) breaks a spanning tree")
        self.count = count
        self.trace.append(SwapRecord(self.j, k, count, cut, e, f, rule))
        self.trace.peak_blocks = max(self.trace.peak_blocks, len(self.blocks))
        logger.debug(f"swap j={self.j} k={k} x{count} cut={cut} e={e} f={f} ({rule})")

    def _check_prefix_cuts(self, upto):
        for h in range(0, upto + 1):
            if self.j <= self.theta[h] and len(self.head & self.cuts[h]) != 1:
                raise self._fail(f"tree {self.j} has {len(self.head & self.cuts[h])} edges in cut {h}")

    def enforce_connected(self, i):
        n = self.n
        level = self.levels[i]
        steps = 0
        while not induced_connected(self.head, level, n):
            steps += 1
            if steps > self.cap:
                raise self._fail(f"connectivity loop exceeded {self.cap} iterations at cut {i}")
            h = self._previous_active(i)
            if h is None:
                raise self._fail(f"no active cut below {i} at index {self.j}")
            lower = self.levels[h]
            ring = level - lower

            if not induced_connected(self.head, ring, n):
                before = inner_count(self.head, level, n)
                k = find_connected_partner(self.blocks, self.j, ring, n)
                e, f = exchange_for_connectivity(self.head, self.tree_at(k), level, ring, n)
                self._swap(k, e, f, i, "connected-ring")
                if inner_count(self.head, level, n) != before + 1:
                    raise self._fail(f"ring exchange did not grow E[U_{i}] at index {self.j}")
                continue

            if h > 0:
                g = self._previous_active(h)
                if g is None:
                    raise self._fail(f"no active cut below {h} at index {self.j}")
                cities, rule = level - self.levels[g], "connected-band"
            else:
                cities, rule = level, "connected-level"
            k = find_connected_partner(self.blocks, self.j, cities, n)
            e, f = exchange_for_connectivity(self.head, self.tree_at(k), level, cities, n)
            self._swap(k, e, f, i, rule)
            if not induced_connected(self.head, level, n):
                raise self._fail(f"tree {self.j} still disconnected on U_{i} after exchange")

            if h > 0 and len(self.head & self.cuts[h]) == 2:
                self._rejoin(h, i)

        self._check_prefix_cuts(i - 1)

    def _rejoin(self, h, i):
        """Move the shared C_h & C_i edge out of the tree at j."""
        n = self.n
        table = edge_table(n)
        shared = self.head & self.cuts[h] & self.cuts[i]
        if len(shared) != 1:
            raise self._fail(f"expected one edge in C_{h} & C_{i}, found {len(shared)}")
        (e,) = shared
        u, v = table[e]
        inner, outer = (u, v) if u in self.levels[h] else (v, u)
        k = find_disjoint_partner(self.blocks, self.j, self.cuts[h], self.cuts[i])
        component = reach(self.head, outer, n, blocked=self.cuts[i])
        f = next((g for g in tree_path(self.tree_at(k), inner, outer, n) if _crosses(g, component, n)), None)
        if f is None:
            raise self._fail(f"no rejoin edge on the partner path at index {self.j}")
        self._swap(k, e, f, i, "connected-rejoin")

    def enforce_single_edge(self, i):
        n = self.n
        table = edge_table(n)
        cut, level = self.cuts[i], self.levels[i]
        steps = 0
        while len(self.head & cut) >= 2:
            steps += 1
            if steps > self.cap:
                raise self._fail(f"single-edge loop exceeded {self.cap} iterations at cut {i}")
            before = len(self.head & cut)
            k = find_single_edge_partner(self.blocks, self.theta[i], cut)
            partner = self.tree_at(k)
            (crossing,) = partner & cut
            a, b = table[crossing]
            y = b if a in level else a
            side_a = reach(self.head, y, n, blocked=cut)
            e = min(g for g in self.head & cut if not _crosses(g, side_a, n))
            u, v = table[e]
            w = v if u in level else u
            side_b = reach(self.head, w, n, blocked=cut)
            f = next((g for g in tree_path(partner, w, y, n) if _crosses(g, side_b, n)), None)
            if f is None:
                raise self._fail(f"no exchange edge on the partner path at index {self.j}")
            self._swap(k, e, f, i, "single-edge")
            if len(self.head & cut) != before - 1:
                raise self._fail(f"single-edge exchange did not reduce |S & C_{i}| at index {self.j}")
        if not induced_connected(self.head, level, n):
            raise self._fail(f"tree {self.j} lost connectivity on U_{i}")
        self._check_prefix_cuts(i)

    def run(self):
        j = 1
        while j <= self.r:
            active = [i for i in range(1, self.ell) if j <= self.theta[i]]
            if not active:
                break
            end = min(self.theta[i] for i in active)
            b, start = locate(self.blocks, j)
            self.j = j
            self.count = min(start + self.blocks[b].count - j, end - j + 1)
            isolate(self.blocks, j, self.count)
            for i in active:
                self.enforce_connected(i)
                self.enforce_single_edge(i)
            j += self.count
        return self.trace


def merge_blocks(blocks):
    merged = []
    for block in blocks:
        if merged and merged[-1].tree == block.tree:
            merged[-1].count += block.count
        else:
            merged.append(block.copy())
    return merged


def reassemble(ensemble, chain, profile):
    """Reassembled ensemble with the same edge vector and the prefix property, plus its trace."""
    worker = Reassembler(ensemble, chain, profile)
    trace = worker.run()
    result = RoundedEnsemble(ensemble.n, merge_blocks(worker.blocks), ensemble.r, ensemble.epsilon,
                             ensemble.leftover, ensemble.kept_mass)
    if ensemble.epsilon == 0 and not is_global_gao_tree(result.blocks[0].tree, chain, ensemble.n):
        raise StructureViolation("first tree of the exact ensemble is not a global Gao tree", trace=trace,
                                 stage="reassemble")
    logger.info(f"Reassembly: {len(trace)} exchanges, {len(result.blocks)} blocks (peak {trace.peak_blocks})")
    return result, trace


# ---------------------------------------------------------------------------
# Independent checks
# ---------------------------------------------------------------------------

def prefix_errors(ensemble, chain, profile):
    """Trees 1..theta_i must each have exactly one C_i edge, for every level i."""
    n = ensemble.n
    errors = []
    for i, level in enumerate(chain.levels):
        cut = cut_edges(level, n)
        start = 1
        for b, block in enumerate(ensemble.blocks):
            if start > profile.theta[i]:
                break
            hits = len(block.tree & cut)
            if hits != 1:
                errors.append(f"cut {i}: virtual tree {start} (block {b}) has {hits} edges in C_{i}, "
                              f"theta_{i} = {profile.theta[i]}")
                break
            start += block.count
    return errors


def verify_structure(before, after, chain, profile):
    """Every problem found by recomputing all counts from scratch (empty when valid)."""
    errors = []
    if before.r != after.r:
        errors.append(f"r changed from {before.r} to {after.r}")
    if before.counts_vector() != after.counts_vector():
        diff = sorted(e for e in set(before.counts_vector()) | set(after.counts_vector())
                      if before.counts_vector().get(e) != after.counts_vector().get(e))
        errors.append(f"edge vector changed on edges {diff}")
    for b, block in enumerate(after.blocks):
        if not is_spanning_tree(block.tree, after.n):
            errors.append(f"block {b} is not a spanning tree")
    errors.extend(prefix_errors(after, chain, profile))
    return errors


def replay_trace(ensemble, trace):
    """Apply a recorded trace to the input ensemble."""
    n = ensemble.n
    blocks = [block.copy() for block in ensemble.blocks]
    for index, record in enumerate(trace.records):
        head = isolate(blocks, record.j, record.count)
        partner = isolate(blocks, record.k, record.count)
        tree_j, tree_k = blocks[head].tree, blocks[partner].tree
        if record.e not in tree_j or record.f in tree_j or record.f not in tree_k or record.e in tree_k:
            raise StructureViolation(f"trace record {index} does not apply (j={record.j}, k={record.k})",
                                     trace=trace, stage="verify")
        blocks[head].tree = (tree_j - {record.e}) | {record.f}
        blocks[partner].tree = (tree_k - {record.f}) | {record.e}
        if not (is_spanning_tree(blocks[head].tree, n) and is_spanning_tree(blocks[partner].tree, n)):
            raise StructureViolation(f"trace record {index} breaks a spanning tree", trace=trace, stage="verify")
    return RoundedEnsemble(n, merge_blocks(blocks), ensemble.r, ensemble.epsilon, ensemble.leftover,
                           ensemble.kept_mass)
