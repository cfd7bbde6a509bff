"""Spanning-tree decomposition of an LP point and rounding to a uniform multiset."""

import logging
import math
from fractions import Fraction
from itertools import combinations

import networkx as nx

from gaotour.models import (
    Block, DecompositionError, RoundedEnsemble, SolverError, TreeDistribution, edge_endpoints,
    edge_table, to_fraction,
)
from gaotour.simplex import SimplexSolver

logger = logging.getLogger(__name__)

VIOLATED_SET_MAX_N = 16


def tree_graph(tree, n, blocked=frozenset()):
    """Graph on all n cities with the tree's edges, minus blocked ones; edges carry their id."""
    graph = nx.Graph()
    graph.add_nodes_from(range(n))
    for e in tree:
        if e not in blocked:
            u, v = edge_endpoints(e, n)
            graph.add_edge(u, v, id=e)
    return graph


def is_spanning_tree(tree, n):
    """n-1 distinct edges forming a tree on all n cities."""
    tree = list(tree)
    if len(tree) != n - 1 or len(set(tree)) != len(tree):
        return False
    if any(not 0 <= e < n * (n - 1) // 2 for e in tree):
        return False
    return n == 1 or nx.is_tree(tree_graph(tree, n))


def _support_graph(x, n, weights):
    graph = nx.Graph()
    graph.add_nodes_from(range(n))
    for e in sorted(x):
        u, v = edge_endpoints(e, n)
        graph.add_edge(u, v, weight=weights[e], id=e)
    return graph


def max_weight_tree(x, n, weights):
    """Maximum-weight spanning tree of the support of x (Kruskal)."""
    graph = _support_graph(x, n, weights)
    tree = nx.maximum_spanning_tree(graph, weight="weight", algorithm="kruskal")
    return frozenset(data["id"] for _, _, data in tree.edges(data=True))


def inner_value(x, n, cities):
    cities = set(cities)
    return sum((val for e, val in x.items() if set(edge_endpoints(e, n)) <= cities), Fraction(0))


def find_violated_rank_set(x, n, max_n=VIOLATED_SET_MAX_N):
    """Most violated U with x(E[U]) > |U| - 1, or None."""
    if n > max_n:
        return None
    best, best_excess = None, 0
    for size in range(2, n + 1):
        for cities in combinations(range(n), size):
            excess = inner_value(x, n, cities) - (size - 1)
            if excess > best_excess:
                best, best_excess = frozenset(cities), excess
    return best


def _outside_polytope(x, n, message):
    violated = find_violated_rank_set(x, n)
    if violated is not None:
        message += f"; x(E[U]) = {inner_value(x, n, violated)} > |U| - 1 for U = {sorted(violated)}"
    return DecompositionError(message, violated_set=violated, stage="decompose",
                              payload={"violated_set": sorted(violated) if violated else None})


def decompose(solution, s=None, t=None, max_columns=None):
    """Write x as a convex combination of spanning trees by column generation.

    The master LP minimizes the total artificial slack in
    sum_S lambda_S chi^S + a = x over the support of x; pricing is a
    maximum-weight spanning tree under the master duals.
    """
    n = solution.n
    x = {e: to_fraction(val) for e, val in solution.x.items() if val != 0}
    total = sum(x.values(), Fraction(0))
    if total != n - 1:
        violated = frozenset(range(n)) if total > n - 1 else None
        raise DecompositionError(f"x(E) = {total}, a spanning-tree combination needs {n - 1}",
                                 violated_set=violated, stage="decompose")
    if n == 2:
        return TreeDistribution(n, [(frozenset(x), Fraction(1))])

    support = sorted(x)
    if not nx.is_connected(_support_graph(x, n, x)):
        raise _outside_polytope(x, n, "Support of x is disconnected")

    max_columns = max_columns or 20 * n * n
    solver = SimplexSolver(exact=True)
    pool = [max_weight_tree(x, n, x)]
    seen = set(pool)
    while True:
        cols = len(pool)
        # variables: lambda_S for S in pool, then one artificial per support edge
        c = [0] * cols + [1] * len(support)
        rows = []
        for r, e in enumerate(support):
            row = [1 if e in tree else 0 for tree in pool] + [0] * len(support)
            row[cols + r] = 1
            rows.append(row)
        result = solver.solve(c, rows, ["="] * len(support), [x[e] for e in support])
        logger.debug(f"Master LP: {cols} trees, residual {result.value}")
        if result.value == 0:
            break
        duals = {e: result.duals[r] for r, e in enumerate(support)}
        tree = max_weight_tree(x, n, duals)
        if sum((duals[e] for e in tree), Fraction(0)) <= 0 or tree in seen:
            raise _outside_polytope(x, n, f"x is outside the spanning-tree polytope (residual {result.value})")
        if len(pool) >= max_columns:
            raise DecompositionError(f"Column generation exceeded {max_columns} trees", stage="decompose")
        pool.append(tree)
        seen.add(tree)

    blocks = [(tree, to_fraction(result.x[col])) for col, tree in enumerate(pool) if result.x[col] > 0]
    blocks = caratheodory_prune(blocks, n)
    dist = TreeDistribution(n, blocks)

    if s is not None and t is not None:
        s_t_degree_check(dist, s, t)
    if not verify_combination(dist, x):
        raise DecompositionError("Decomposition does not reproduce x", stage="decompose")
    logger.info(f"Decomposed x into {len(dist)} trees after {len(pool)} generated columns")
    return dist


def s_t_degree_check(dist, s, t):
    """Every tree of an exact combination of an LP point has one edge at s and one at t."""
    n = dist.n
    for index, (tree, _) in enumerate(dist.blocks):
        for end in (s, t):
            d = sum(1 for e in tree if end in edge_endpoints(e, n))
            if d != 1:
                raise DecompositionError(f"Tree {index} has degree {d} at endpoint {end}", stage="decompose")


def _null_vector(columns):
    """Exact nonzero mu with sum_j mu_j columns[j] = 0, or None if independent."""
    k = len(columns)
    m = len(columns[0])
    mat = [[Fraction(columns[j][r]) for j in range(k)] for r in range(m)]
    pivots, row = [], 0
    for col in range(k):
        pivot = next((r for r in range(row, m) if mat[r][col] != 0), None)
        if pivot is None:
            continue
        mat[row], mat[pivot] = mat[pivot], mat[row]
        lead = mat[row][col]
        mat[row] = [v / lead for v in mat[row]]
        for r in range(m):
            if r != row and mat[r][col] != 0:
                f = mat[r][col]
                mat[r] = [a - f * b for a, b in zip(mat[r], mat[row])]
        pivots.append(col)
        row += 1
        if row == m:
            break
    free = next((col for col in range(k) if col not in pivots), None)
    if free is None:
        return None
    mu = [Fraction(0)] * k
    mu[free] = Fraction(1)
    for r, col in enumerate(pivots):
        mu[col] = -mat[r][free]
    return mu


def caratheodory_prune(blocks, n):
    """Drop trees until the columns (chi^S, 1) are linearly independent."""
    blocks = [(frozenset(tree), to_fraction(w)) for tree, w in blocks]
    edges = sorted({e for tree, _ in blocks for e in tree})
    while len(blocks) > 1:
        columns = [[1 if e in tree else 0 for e in edges] + [1] for tree, _ in blocks]
        mu = _null_vector(columns)
        if mu is None:
            break
        if not any(m > 0 for m in mu):
            mu = [-m for m in mu]
        step = min(w / m for (_, w), m in zip(blocks, mu) if m > 0)
        blocks = [(tree, w - step * m) for (tree, w), m in zip(blocks, mu)]
        blocks = [(tree, w) for tree, w in blocks if w != 0]
    return blocks


def combination_errors(dist, x, tol=0):
    """Reasons why dist does not reproduce x (empty when it does)."""
    n = dist.n
    errors = []
    for index, (tree, weight) in enumerate(dist.blocks):
        if weight <= 0:
            errors.append(f"block {index}: non-positive weight {weight}")
        if not is_spanning_tree(tree, n):
            errors.append(f"block {index}: not a spanning tree ({len(tree)} edges)")
    if dist.weight_sum() != dist.total and abs(dist.weight_sum() - dist.total) > tol:
        errors.append(f"weights sum to {dist.weight_sum()}, declared total {dist.total}")
    combined = dist.edge_vector()
    for e in sorted(set(combined) | set(x)):
        diff = combined.get(e, 0) - x.get(e, 0)
        if diff != 0 and abs(diff) > tol:
            u, v = edge_endpoints(e, n)
            errors.append(f"edge ({u},{v}): combination {combined.get(e, 0)} vs x {x.get(e, 0)}")
    return errors


def verify_combination(dist, x, tol=0):
    return not combination_errors(dist, x, tol)


def snap_epsilon(n, epsilon):
    """Largest eps' <= eps with n^3 / eps' integral."""
    epsilon = to_fraction(epsilon)
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    return Fraction(n ** 3, math.ceil(n ** 3 / epsilon))


def default_epsilon(n, target_r=100000):
    """Desk default eps = 2 n^3 / target_r, which keeps r <= target_r."""
    return Fraction(2 * n ** 3, target_r)


def property_two_gap(x_rounded, x_star):
    """max over F of |x(F) - x*(F)|."""
    positive = negative = Fraction(0)
    for e in set(x_rounded) | set(x_star):
        diff = x_rounded.get(e, 0) - x_star.get(e, 0)
        if diff > 0:
            positive += diff
        else:
            negative -= diff
    return max(positive, negative)


def _check_property_two(ensemble, x_star, s, t):
    n = ensemble.n
    x = ensemble.x
    for end in (s, t):
        deg = sum((val for e, val in x.items() if end in edge_endpoints(e, n)), Fraction(0))
        if deg != 1:
            raise SolverError(f"Rounded x has x(delta({end})) = {deg}", stage="round")
    gap = property_two_gap(x, x_star)
    if gap > ensemble.epsilon:
        raise SolverError(f"Rounded x deviates from x* by {gap} > eps = {ensemble.epsilon}", stage="round")
    return gap


def round_distribution(dist, epsilon, n, x_star=None, s=None, t=None):
    """Keep 2 floor(n^3 p_S / eps) copies of every tree; the rest becomes the leftover p''."""
    epsilon = to_fraction(epsilon)
    if epsilon <= 0:
        raise SolverError(f"epsilon must be positive, got {epsilon}", stage="round")
    if dist.total != 1 or dist.weight_sum() != 1:
        raise SolverError(f"Distribution total is {dist.weight_sum()}, expected 1", stage="round")
    epsilon = snap_epsilon(n, epsilon)
    scale = n ** 3 / epsilon  # integral after snapping
    if scale.denominator != 1:
        raise SolverError(f"n^3/eps = {scale} is not integral", stage="round")
    scale = scale.numerator

    blocks, leftover, kept = [], [], Fraction(0)
    for tree, p in dist.blocks:
        units = math.floor(scale * p)
        p_kept = Fraction(units, scale)
        if units > 0:
            blocks.append(Block(tree, 2 * units))
        kept += p_kept
        if p - p_kept > 0:
            leftover.append((tree, p - p_kept))
    r = sum(b.count for b in blocks)
    if r == 0:
        raise SolverError(f"eps = {epsilon} keeps no tree; choose a smaller epsilon", stage="round")

    leftover = TreeDistribution(n, leftover, total=1 - kept)
    if leftover.weight_sum() > epsilon / n:
        raise SolverError(f"Leftover mass {leftover.weight_sum()} exceeds eps/n = {epsilon / n}", stage="round")
    ensemble = RoundedEnsemble(n, blocks, r, epsilon, leftover, kept_mass=kept)
    if x_star is not None and s is not None and t is not None:
        _check_property_two(ensemble, x_star, s, t)
    logger.info(f"Rounded {len(dist)} trees: eps={epsilon}, r={r}, kept mass {kept}, "
                f"{len(leftover)} leftover trees")
    return ensemble


def exact_ensemble(dist, max_r=200000):
    """The eps = 0 ensemble: r = 2 lcm(weight denominators), every weight an exact multiple of 1/r."""
    if dist.weight_sum() != 1:
        raise SolverError(f"Distribution total is {dist.weight_sum()}, expected 1", stage="round")
    lcm = 1
    for _, p in dist.blocks:
        lcm = lcm * p.denominator // math.gcd(lcm, p.denominator)
    r = 2 * lcm
    if r > max_r:
        raise SolverError(f"Exact ensemble needs r = {r} > {max_r}", stage="round")
    blocks = [Block(tree, int(p * r)) for tree, p in dist.blocks]
    logger.info(f"Exact ensemble: r={r} over {len(blocks)} trees")
    return RoundedEnsemble(dist.n, blocks, r, 0)


def distribution_from_ensemble(ensemble):
    return TreeDistribution(ensemble.n, [(b.tree, Fraction(b.count, ensemble.r)) for b in ensemble.blocks])

