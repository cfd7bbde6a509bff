"""Path LP relaxation solved by cutting planes with min-cut separation."""

import json
import logging
from fractions import Fraction

import networkx as nx
from networkx.algorithms.flow import edmonds_karp

from gaotour.models import (
    FeasibilityReport, FractionalSolution, LPStallError, SolverError, Violation, edge_table,
    to_fraction,
)
from gaotour.simplex import SimplexSolver

logger = logging.getLogger(__name__)

SNAP_DENOMINATOR = 10 ** 6
_SRC, _SNK = "source", "sink"


def cut_bound(cities, s, t):
    """Right-hand side of the cut row for U: 1 if U separates s from t, else 2."""
    return 1 if (s in cities) != (t in cities) else 2


def degree_bound(v, s, t):
    return 1 if v in (s, t) else 2


def cut_value(x, n, cities):
    inside = cities if isinstance(cities, (set, frozenset)) else set(cities)
    table = edge_table(n)
    total = 0
    for e, val in x.items():
        u, v = table[e]
        if (u in inside) != (v in inside):
            total += val
    return total


def degrees(x, n):
    deg = [0] * n
    table = edge_table(n)
    for e, val in x.items():
        u, v = table[e]
        deg[u] += val
        deg[v] += val
    return deg


def min_cut(x, n, sources, sinks):
    """Minimum x-cut with `sources` on one side and `sinks` on the other.

    Returns (value, U) where U is the inclusion-minimal source side.
    """
    graph = nx.DiGraph()
    graph.add_nodes_from(range(n))
    graph.add_nodes_from((_SRC, _SNK))
    table = edge_table(n)
    for e, val in x.items():
        if val > 0:
            u, v = table[e]
            graph.add_edge(u, v, capacity=val)
            graph.add_edge(v, u, capacity=val)
    # edges without a capacity attribute are uncapacitated
    for u in sources:
        graph.add_edge(_SRC, u)
    for v in sinks:
        graph.add_edge(v, _SNK)

    residual = edmonds_karp(graph, _SRC, _SNK, capacity="capacity")
    reach, stack = {_SRC}, [_SRC]
    while stack:
        u = stack.pop()
        for v, attr in residual[u].items():
            if v not in reach and attr["capacity"] - attr["flow"] > 0:
                reach.add(v)
                stack.append(v)
    side = frozenset(v for v in reach if v != _SRC)
    return cut_value(x, n, side), side


def _better(candidate, incumbent):
    value, side = candidate
    if incumbent is None:
        return True
    best_value, best_side = incumbent
    return (value, len(side), sorted(side)) < (best_value, len(best_side), sorted(best_side))


def separate(x, inst, tol=0):
    """First violated row of the path LP, or None.

    Order: the s-t cut family (>= 1), then cuts not separating s and t (>= 2),
    then degree equalities.
    """
    n, s, t = inst.n, inst.s, inst.t

    value, side = min_cut(x, n, [s], [t])
    if value < 1 - tol:
        return Violation("cut", side, value, 1)

    best = None
    for v in range(n):
        if v in (s, t):
            continue
        candidate = min_cut(x, n, [v], [s, t])
        if _better(candidate, best):
            best = candidate
    if best is not None and best[0] < 2 - tol:
        return Violation("cut", best[1], best[0], 2)

    deg = degrees(x, n)
    for v in range(n):
        bound = degree_bound(v, s, t)
        if abs(deg[v] - bound) > tol:
            return Violation("degree", [v], deg[v], bound)
    return None


def exhaustive_separate(x, inst, tol=0, max_n=15):
    """Worst violated cut over all 2^n subsets (t kept outside U), or None."""
    n, s, t = inst.n, inst.s, inst.t
    if n > max_n:
        raise ValueError(f"Exhaustive separation capped at n={max_n}, instance has n={n}")
    others = [v for v in range(n) if v != t]
    table = edge_table(n)
    support = [(table[e], val) for e, val in x.items() if val != 0]
    worst = None
    for mask in range(1, 1 << len(others)):
        inside = {others[b] for b in range(len(others)) if mask >> b & 1}
        value = sum((val for (u, v), val in support if (u in inside) != (v in inside)), 0)
        bound = cut_bound(inside, s, t)
        if value < bound - tol:
            violation = Violation("cut", inside, value, bound)
            if worst is None or (violation.amount, -len(inside)) > (worst.amount, -len(worst.cities)):
                worst = violation
    return worst


def check_feasible(x, inst, tol=0, exhaustive_n=15):
    """Degree checks plus separation; the report carries the worst violation."""
    n, s, t = inst.n, inst.s, inst.t
    deg = degrees(x, n)
    degree_violations = [Violation("degree", [v], deg[v], degree_bound(v, s, t))
                         for v in range(n) if abs(deg[v] - degree_bound(v, s, t)) > tol]
    cut_violation = separate(x, inst, tol)
    if cut_violation is not None and cut_violation.kind != "cut":
        cut_violation = None
    exhaustive_violation = None
    exhaustive = n <= exhaustive_n
    if exhaustive:
        exhaustive_violation = exhaustive_separate(x, inst, tol, max_n=exhaustive_n)
    return FeasibilityReport(degree_violations, cut_violation, exhaustive_violation, exhaustive)


class CuttingPlaneSolver:
    """Re-solves the LP over a growing cut pool until separation finds nothing."""

    def __init__(self, inst, max_rounds=200, tol=1e-9):
        self.inst = inst
        self.max_rounds = max_rounds
        self.tol = tol
        n, s, t = inst.n, inst.s, inst.t
        self.pool = [frozenset([v]) for v in range(n)]
        self.seen = set(self.pool)
        self.rounds = 0
        self.table = edge_table(n)
        self.degree_rows = []
        for v in range(n):
            self.degree_rows.append(([1 if v in pair else 0 for pair in self.table], degree_bound(v, s, t)))

    def _rows(self):
        s, t = self.inst.s, self.inst.t
        rows, senses, rhs = [], [], []
        for row, bound in self.degree_rows:
            rows.append(row)
            senses.append("=")
            rhs.append(bound)
        for cities in self.pool:
            rows.append([1 if (u in cities) != (v in cities) else 0 for u, v in self.table])
            senses.append(">=")
            rhs.append(cut_bound(cities, s, t))
        return rows, senses, rhs

    def run(self, exact):
        inst = self.inst
        solver = SimplexSolver(exact=exact, tol=self.tol)
        costs = [to_fraction(inst.edge_cost(e)) if exact else float(inst.edge_cost(e)) for e in inst.edges()]
        tol = 0 if exact else self.tol
        while True:
            if self.rounds >= self.max_rounds:
                raise LPStallError(f"Cutting-plane loop hit {self.max_rounds} rounds", stage="lp")
            self.rounds += 1
            result = solver.solve(costs, *self._rows())
            x = {e: val for e, val in enumerate(result.x) if val > tol}
            violation = separate(x, inst, tol)
            logger.debug(f"LP round {self.rounds} ({'exact' if exact else 'float'}): value={result.value}, "
                         f"violation={violation.dict() if violation else None}")
            if violation is None:
                return x, result.value
            if violation.kind != "cut" or violation.cities in self.seen:
                raise LPStallError(f"Separation repeated {violation.key()} without progress", stage="lp")
            self.seen.add(violation.cities)
            self.pool.append(violation.cities)


def snap(x, max_denominator=SNAP_DENOMINATOR):
    snapped = {e: Fraction(val).limit_denominator(max_denominator) for e, val in x.items()}
    return {e: val for e, val in snapped.items() if val != 0}


def solve_relaxation(inst, exact=None, max_rounds=200, tol=1e-9):
    """Optimal extreme point of the path LP, returned with exact rational entries."""
    exact = inst.exact if exact is None else exact
    solver = CuttingPlaneSolver(inst, max_rounds=max_rounds, tol=tol)

    x, mode = None, "exact"
    try:
        x_float, value = solver.run(exact=False)
        logger.info(f"Float cutting planes converged after {solver.rounds} rounds, value {value:.6f}")
        if not exact:
            candidate = snap(x_float)
            if check_feasible(candidate, inst, 0, exhaustive_n=0).feasible:
                x, mode = candidate, "float-snapped"
            else:
                logger.warning("Snapped float LP point is not exactly feasible, retrying in exact mode")
    except (LPStallError, SolverError) as e:
        logger.warning(f"Float LP failed ({e}), retrying in exact mode")

    if x is None:
        x, _ = solver.run(exact=True)
        x = {e: to_fraction(val) for e, val in x.items()}

    total = sum(x.values(), Fraction(0))
    if total != inst.n - 1:
        raise SolverError(f"x(E) = {total}, expected {inst.n - 1}", stage="lp")
    value = inst.vector_cost(x)
    logger.info(f"LP relaxation ({mode}): value {value} ({float(value):.6f}), support {len(x)} edges, "
                f"{len(solver.pool)} cuts, {solver.rounds} rounds")
    return FractionalSolution(inst.n, x, value, exact=(mode == "exact"), rounds=solver.rounds,
                              pool_size=len(solver.pool))


def dump_solution(solution):
    return json.dumps(solution.dict(), sort_keys=True)


def load_solution(text, n):
    return FractionalSolution.from_dict(json.loads(text), n)
