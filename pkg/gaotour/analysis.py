"""Certificates: correction vectors, benefits per narrow cut, and the best-of-many bound."""

import logging
from fractions import Fraction

from gaotour.models import (
    BENEFIT_FACTOR, CertificateError, CutAudit, fraction_str, to_fraction, tree_key, edge_table,
)
from gaotour.parity import wrong_parity_set
from gaotour.reassembly import cut_edges, is_global_gao_tree, tree_path

logger = logging.getLogger(__name__)

POLYHEDRON_EXHAUSTIVE_N = 12


def benefit(crossing, value, gamma, params):
    """Credit of a tree with `crossing` edges in a narrow cut of LP value `value`."""
    if crossing == 1:
        return 1 - gamma
    if crossing % 2 == 0:
        return min(params.factor * (2 - value - params.epsilon), gamma)
    return Fraction(0)


def split_tree(tree, s, t, n):
    """(I_S, J_S): the s-t path of the tree and the remaining edges, a T_S-join."""
    path = frozenset(tree_path(tree, s, t, n))
    return path, frozenset(tree) - path


def cheapest_edge(inst, cities):
    """Minimum-cost edge of delta(cities), lowest id on ties."""
    return min(cut_edges(cities, inst.n), key=lambda e: (inst.exact_edge_cost(e), e))


def _add(vector, e, amount):
    if amount:
        vector[e] = vector.get(e, Fraction(0)) + amount


def correction_vectors(inst, tree, gamma, chain, params, x_star):
    """(z^S, y^S) for one tree and its gamma; sparse dicts of exact rationals."""
    n = inst.n
    gamma = to_fraction(gamma)
    path, rest = split_tree(tree, inst.s, inst.t, n)
    lift = (1 - 2 * params.beta) * gamma

    z = {}
    for e in path:
        _add(z, e, lift)
    for level, value in zip(chain.levels, chain.values):
        if len(tree & cut_edges(level, n)) % 2:
            continue
        _add(z, cheapest_edge(inst, level), max(Fraction(0), params.beta * (2 - value - params.epsilon) - lift))

    y = {}
    for e, val in x_star.items():
        _add(y, e, params.beta * (1 + params.epsilon) * to_fraction(val))
    for e in rest:
        _add(y, e, 1 - 2 * params.beta)
    for e, val in z.items():
        _add(y, e, val)
    return dict(sorted(z.items())), dict(sorted(y.items()))


def _mask(cities):
    mask = 0
    for v in cities:
        mask |= 1 << v
    return mask


def _cut_weight(vector, n, mask):
    table = edge_table(n)
    total = Fraction(0)
    for e, val in vector.items():
        u, v = table[e]
        if (mask >> u & 1) != (mask >> v & 1):
            total += val
    return total


def polyhedron_violations(vector, target, n, chain=None, exhaustive_n=POLYHEDRON_EXHAUSTIVE_N, limit=5):
    """Sets U with |U & T| odd and vector(delta(U)) < 1.

    Exhaustive over all U (up to complement) when n <= exhaustive_n; otherwise only
    the narrow-cut levels are checked. Returns (violations, mode).
    """
    t_mask = _mask(target)
    if n <= exhaustive_n:
        masks, mode = range(1, 1 << (n - 1)), "exhaustive"
    else:
        if chain is None:
            raise ValueError(f"n={n} exceeds {exhaustive_n} and no narrow cuts were given")
        masks, mode = [_mask(level) for level in chain.levels], "narrow-cuts-only"
    violations = []
    for mask in masks:
        if bin(mask & t_mask).count("1") % 2 == 0:
            continue
        weight = _cut_weight(vector, n, mask)
        if weight < 1:
            violations.append({"cities": [v for v in range(n) if mask >> v & 1], "weight": fraction_str(weight)})
            if len(violations) >= limit:
                break
    return violations, mode


def _virtual_split(start, count, r):
    """Copies of a block at indices start..start+count-1 with j <= r/2, and the rest."""
    low = max(0, min(count, r // 2 - start + 1))
    return low, count - low


def check_benefit_inequality(ensemble, chain, params, strict=True):
    """One CutAudit per narrow cut; every cut must carry enough benefit."""
    n, r = ensemble.n, ensemble.r
    if r % 2:
        raise CertificateError(f"benefit accounting needs r even, got r={r}", stage="analysis")
    low_gamma, high_gamma = params.gamma(1), params.gamma(r)
    starts = ensemble.starts()
    audits, problems = [], []
    for i, (level, value) in enumerate(zip(chain.levels, chain.values)):
        cut = cut_edges(level, n)
        total, even, crossing_sum = Fraction(0), 0, 0
        for start, block in zip(starts, ensemble.blocks):
            crossing = len(block.tree & cut)
            low, high = _virtual_split(start, block.count, r)
            total += low * benefit(crossing, value, low_gamma, params)
            total += high * benefit(crossing, value, high_gamma, params)
            crossing_sum += crossing * block.count
            if crossing % 2 == 0:
                even += block.count
        pi = Fraction(even, r)
        required = BENEFIT_FACTOR * (2 - value - params.epsilon) * pi
        audit = CutAudit(i, value, params.epsilon, pi, total / r, required)
        audits.append(audit)
        if not audit.passed:
            problems.append(f"cut {i}: benefit {audit.benefit} < required {required}")
        x_cut = Fraction(crossing_sum, r)
        if pi > x_cut - 1 or pi > audit.xi - 1:
            problems.append(f"cut {i}: even fraction {pi} exceeds x(C)-1 = {x_cut - 1} or xi-1 = {audit.xi - 1}")
    if problems:
        logger.error(f"Benefit certificate failed on {len(problems)} checks")
        if strict:
            raise CertificateError("; ".join(problems), stage="analysis",
                                   payload={"audits": [a.dict() for a in audits]})
    else:
        logger.info(f"Benefit certificate passed on {len(audits)} narrow cuts")
    return audits


def tree_certificates(inst, ensemble, chain, params, x_star, join_costs, exhaustive_n=POLYHEDRON_EXHAUSTIVE_N):
    """c(y^S) for every (block, gamma) segment, checked against the T_S-join polyhedron.

    join_costs maps tree keys to the cost of the T-join the parity step chose.
    """
    n, r = inst.n, ensemble.r
    rows, problems, modes = [], [], set()
    for b, (start, block) in enumerate(zip(ensemble.starts(), ensemble.blocks)):
        low, high = _virtual_split(start, block.count, r)
        target = wrong_parity_set(block.tree, inst.s, inst.t, n)
        for count, gamma in ((low, params.gamma(1)), (high, params.gamma(r))):
            if count == 0:
                continue
            _, y = correction_vectors(inst, block.tree, gamma, chain, params, x_star)
            y_cost = inst.vector_cost(y)
            violations, mode = polyhedron_violations(y, target, n, chain, exhaustive_n)
            modes.add(mode)
            join_cost = join_costs.get(tree_key(block.tree))
            if violations:
                problems.append(f"block {b}: y^S misses the T_S-join polyhedron at {violations[0]['cities']}")
            if join_cost is not None and join_cost > y_cost:
                problems.append(f"block {b}: T-join cost {join_cost} > c(y^S) = {y_cost}")
            rows.append({"block": b, "count": count, "gamma": gamma, "y_cost": y_cost, "violations": violations})
    mode = "narrow-cuts-only" if "narrow-cuts-only" in modes else "exhaustive"
    if problems:
        logger.error(f"T-join polyhedron certificate failed: {problems[0]}")
    return rows, mode, problems


def leftover_problems(inst, ensemble, x_star, join_costs, exhaustive_n=POLYHEDRON_EXHAUSTIVE_N):
    """Leftover trees are bounded by y = x*; x* must cover every odd set."""
    problems = []
    x_cost = inst.vector_cost(x_star)
    for tree, _ in ensemble.leftover.blocks:
        join_cost = join_costs.get(tree_key(tree))
        if join_cost is not None and join_cost > x_cost:
            problems.append(f"leftover tree {tree_key(tree)}: T-join cost {join_cost} > c(x*) = {x_cost}")
        if inst.n <= exhaustive_n:
            target = wrong_parity_set(tree, inst.s, inst.t, inst.n)
            violations, _ = polyhedron_violations(x_star, target, inst.n, exhaustive_n=exhaustive_n, limit=1)
            if violations:
                problems.append(f"leftover tree {tree_key(tree)}: x* misses the polyhedron at "
                                f"{violations[0]['cities']}")
    return problems


def half_lp_in_polyhedron(inst, x_star, tree, chain, exhaustive_n=POLYHEDRON_EXHAUSTIVE_N):
    """For a global Gao tree S, (1/2) x* lies in the T_S-join polyhedron.

    Returns (applicable, violations); not applicable when the tree is not a global
    Gao tree or n is above the exhaustive cap.
    """
    if inst.n > exhaustive_n or not is_global_gao_tree(tree, chain, inst.n):
        return False, []
    half = {e: to_fraction(val) / 2 for e, val in x_star.items()}
    target = wrong_parity_set(tree, inst.s, inst.t, inst.n)
    violations, _ = polyhedron_violations(half, target, inst.n, exhaustive_n=exhaustive_n)
    return True, violations


def averaging_bound(inst, ensemble, params, x_star, y_costs):
    """Weighted average of c(S) + c(y^S) over kept and leftover trees.

    y_costs holds (count, c(y)) pairs summing to r; the minimum candidate cost can
    never exceed this value.
    """
    r = ensemble.r
    x_cost = inst.vector_cost(x_star)
    kept = sum((Fraction(count, r) * y_cost for count, y_cost in y_costs), Fraction(0))
    kept += sum((Fraction(b.count, r) * inst.edge_set_cost(b.tree) for b in ensemble.blocks), Fraction(0))
    value = ensemble.kept_mass * kept
    for tree, p in ensemble.leftover.blocks:
        value += p * (inst.edge_set_cost(tree) + x_cost)
    return value


def bound_report(inst, candidates, leftover_candidates, params, lp_value, ensemble=None, x_star=None,
                 y_costs=None):
    """Best tour with the approximation certificate and its supporting inequalities."""
    pool = list(candidates) + list(leftover_candidates)
    if not pool:
        raise CertificateError("no tour candidates", stage="analysis")
    best = min(pool, key=lambda c: (c.cost, c.source != "reassembled", str(c.label)))
    lp_value = to_fraction(lp_value)
    limit = params.guarantee() * lp_value
    checks = {"guarantee": fraction_str(params.guarantee()), "limit": fraction_str(limit),
              "best_cost": fraction_str(best.cost), "best_within_limit": best.cost <= limit}

    if ensemble is not None and x_star is not None:
        x_cost = inst.vector_cost(x_star)
        c_x = inst.vector_cost(ensemble.x)
        rounded_limit = x_cost / ensemble.kept_mass
        checks["rounded_cost"] = fraction_str(c_x)
        checks["rounded_cost_limit"] = fraction_str(rounded_limit)
        checks["rounded_cost_ok"] = c_x <= rounded_limit
        if y_costs is not None:
            mean_y = sum((Fraction(count, ensemble.r) * y for count, y in y_costs), Fraction(0))
            correction_limit = (params.beta + params.epsilon * params.beta) * x_cost + (1 - 2 * params.beta) * c_x
            checks["mean_correction_cost"] = fraction_str(mean_y)
            checks["mean_correction_limit"] = fraction_str(correction_limit)
            checks["mean_correction_ok"] = mean_y <= correction_limit
            average = averaging_bound(inst, ensemble, params, x_star, y_costs)
            checks["average"] = fraction_str(average)
            checks["average_ok"] = best.cost <= average <= params.guarantee() * x_cost

    checks["pass"] = checks["best_within_limit"]
    soft = sorted(k for k, v in checks.items() if v is False and k != "best_within_limit")
    if soft:
        logger.warning(f"Supporting inequalities not met: {soft}")
    if not checks["pass"]:
        logger.error(f"Bound certificate failed: best {best.cost} > {limit}")
        raise CertificateError(f"best tour {best.cost} exceeds {limit}", stage="analysis", payload=checks)
    ratio = best.cost / lp_value if lp_value else Fraction(1)
    logger.info(f"Best tour {float(best.cost):.6g} ({best.source}), ratio to LP {float(ratio):.6f}")
    return best, ratio, checks
