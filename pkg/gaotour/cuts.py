"""Chain of narrow cuts (s-t cuts with x*(C) < 2) of a feasible LP point."""

import logging

from gaotour.lp import cut_value, degree_bound, degrees, min_cut
from gaotour.models import NarrowCutChain, SolverError

logger = logging.getLogger(__name__)

MODES = ("exhaustive", "flow")


def _is_narrow(value, margin):
    return value < 2 - margin


def _exhaustive_sets(x, inst, margin):
    n, s, t = inst.n, inst.s, inst.t
    free = [v for v in range(n) if v not in (s, t)]
    found, near = {}, False
    for mask in range(1 << len(free)):
        cities = frozenset([s] + [free[b] for b in range(len(free)) if mask >> b & 1])
        value = cut_value(x, n, cities)
        if _is_narrow(value, margin):
            found[cities] = value
        elif value < 2:
            near = True
    return found, near


def _flow_sets(x, inst, margin):
    """Every narrow level U_i is the minimal cut separating {s, u} from {v, t}
    for u in U_i - U_(i-1) and v in U_(i+1) - U_i."""
    n, s, t = inst.n, inst.s, inst.t
    found, near = {}, False
    for u in range(n):
        if u == t:
            continue
        for v in range(n):
            if v in (s, u):
                continue
            value, cities = min_cut(x, n, {s, u}, {v, t})
            if cities in found:
                continue
            if _is_narrow(value, margin):
                found[cities] = value
            elif value < 2:
                near = True
    return found, near


def narrow_cuts(solution, inst, mode=None, exhaustive_n=20, margin=1e-7):
    """All narrow cuts of x*, sorted by inclusion from {s} to V - {t}."""
    n, s, t = inst.n, inst.s, inst.t
    x = solution.x
    deg = degrees(x, n)
    for v in range(n):
        if deg[v] != degree_bound(v, s, t):
            raise SolverError(f"x* infeasible: x(delta({v})) = {deg[v]}, expected {degree_bound(v, s, t)}",
                              stage="cuts")

    mode = mode or ("exhaustive" if n <= exhaustive_n else "flow")
    if mode not in MODES:
        raise ValueError(f"Unknown narrow-cut mode {mode!r}")
    # exact LP points classify with the true "< 2"
    margin = 0 if solution.exact else margin

    found, near = (_exhaustive_sets if mode == "exhaustive" else _flow_sets)(x, inst, margin)
    found.setdefault(frozenset([s]), cut_value(x, n, {s}))
    found.setdefault(frozenset(v for v in range(n) if v != t), cut_value(x, n, {t}))

    levels = sorted(found, key=lambda cities: (len(cities), sorted(cities)))
    for lower, upper in zip(levels, levels[1:]):
        if not lower < upper:
            raise SolverError(f"Narrow cuts do not form a chain: {sorted(lower)} vs {sorted(upper)}",
                              stage="cuts", payload={"lower": sorted(lower), "upper": sorted(upper)})
    values = [found[cities] for cities in levels]
    if values[0] != 1 or values[-1] != 1:
        raise SolverError(f"x* infeasible: end cuts have values {values[0]} and {values[-1]}", stage="cuts")

    if near:
        logger.warning(f"Cut values within {margin} of 2 treated as not narrow; run flagged boundary")
    chain = NarrowCutChain(levels, values, mode=mode, boundary=near)
    logger.info(f"Narrow cuts ({mode}): ell={chain.ell}, values={[float(v) for v in values]}")
    return chain
