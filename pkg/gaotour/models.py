"""Domain types shared by every stage of the s-t-path pipeline."""

import json
from fractions import Fraction
from functools import lru_cache


# ---------------------------------------------------------------------------
# Numbers and edges
# ---------------------------------------------------------------------------

def to_fraction(value):
    """Lift an int, float, Fraction or 'p/q' string to an exact Fraction."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise ValueError(f"Not a number: {value!r}")
    if isinstance(value, (int, float, str)):
        return Fraction(value)
    raise ValueError(f"Not a number: {value!r}")


def fraction_str(value):
    """Serialize a number so that it can be read back exactly."""
    if isinstance(value, float):
        return repr(value)
    value = to_fraction(value)
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


def edge_index(u, v, n):
    """Dense id of the unordered pair {u, v}; ids follow lexicographic (u, v) order."""
    if u == v:
        raise ValueError(f"No loop edges: {u}")
    if u > v:
        u, v = v, u
    return u * (2 * n - u - 1) // 2 + (v - u - 1)


def triangle_violation(costs, tol=1e-9):
    """First (u, v, w) with c(u,w) > c(u,v) + c(v,w), or None."""
    n = len(costs)
    exact = all(isinstance(c, (int, Fraction)) for row in costs for c in row)
    for v in range(n):
        for u in range(n):
            for w in range(u + 1, n):
                slack = costs[u][v] + costs[v][w] - costs[u][w]
                if exact and slack < 0:
                    return (u, v, w)
                if not exact and slack < -tol * (1 + abs(costs[u][w])):
                    return (u, v, w)
    return None


@lru_cache(maxsize=64)
def edge_table(n):
    return tuple((u, v) for u in range(n) for v in range(u + 1, n))


def edge_endpoints(e, n):
    return edge_table(n)[e]


# ---------------------------------------------------------------------------
# Exceptions
# ---------------------------------------------------------------------------

class SolverError(Exception):
    """A pipeline failure, tagged with the stage that raised it."""

    def __init__(self, message, stage=None, payload=None):
        super().__init__(message)
        self.stage = stage
        self.payload = payload

    def dict(self):
        return {"stage": self.stage, "error": str(self), "payload": self.payload}


class UnsupportedFormatError(SolverError):
    pass


class LPStallError(SolverError):
    pass


class DecompositionError(SolverError):
    def __init__(self, message, violated_set=None, **kwargs):
        super().__init__(message, **kwargs)
        self.violated_set = violated_set


class StructureViolation(SolverError):
    def __init__(self, message, trace=None, **kwargs):
        super().__init__(message, **kwargs)
        self.trace = trace


class CertificateError(SolverError):
    pass


# ---------------------------------------------------------------------------
# Instance
# ---------------------------------------------------------------------------

class Instance:
    """Complete metric on n cities with path endpoints s and t."""

    def __init__(self, n, costs, s, t, name="instance", raw_costs=None):
        if n < 2:
            raise ValueError(f"Need at least 2 cities, got n={n}")
        if len(costs) != n or any(len(row) != n for row in costs):
            raise ValueError(f"Cost matrix is not {n}x{n}")
        if not (0 <= s < n and 0 <= t < n):
            raise ValueError(f"Endpoints out of range: s={s}, t={t}, n={n}")
        if s == t:
            raise ValueError(f"Endpoints must differ: s=t={s}")
        for u in range(n):
            if costs[u][u] != 0:
                raise ValueError(f"Nonzero diagonal at city {u}")
            for v in range(u + 1, n):
                if costs[u][v] != costs[v][u]:
                    raise ValueError(f"Asymmetric costs at ({u},{v})")
                if costs[u][v] < 0:
                    raise ValueError(f"Negative cost at ({u},{v})")
        violation = triangle_violation(costs)
        if violation is not None:
            raise ValueError(f"Triangle inequality fails at {violation}; apply metric_closure first")

        self.n = n
        self.s = s
        self.t = t
        self.name = name
        self.costs = tuple(tuple(row) for row in costs)
        self.exact = all(isinstance(c, (int, Fraction)) for row in costs for c in row)
        if self.exact:
            self.costs = tuple(tuple(Fraction(c) for c in row) for row in self.costs)
        self.raw_costs = tuple(tuple(row) for row in raw_costs) if raw_costs is not None else None

    @property
    def num_edges(self):
        return self.n * (self.n - 1) // 2

    def edges(self):
        return range(self.num_edges)

    def edge_id(self, u, v):
        return edge_index(u, v, self.n)

    def endpoints(self, e):
        return edge_endpoints(e, self.n)

    def cost(self, u, v):
        return self.costs[u][v]

    def edge_cost(self, e):
        u, v = self.endpoints(e)
        return self.costs[u][v]

    def exact_edge_cost(self, e):
        return to_fraction(self.edge_cost(e))

    def delta(self, cities):
        """Edge ids with exactly one endpoint in the given city set."""
        inside = set(cities)
        return [e for e, (u, v) in enumerate(edge_table(self.n)) if (u in inside) != (v in inside)]

    def inner(self, cities):
        """Edge ids with both endpoints in the given city set."""
        inside = set(cities)
        return [e for e, (u, v) in enumerate(edge_table(self.n)) if u in inside and v in inside]

    def edge_set_cost(self, edges):
        """Exact cost of an edge multiset."""
        return sum((self.exact_edge_cost(e) for e in edges), Fraction(0))

    def vector_cost(self, x):
        """Exact cost c(x) of a sparse edge vector."""
        return sum((self.exact_edge_cost(e) * to_fraction(val) for e, val in x.items()), Fraction(0))

    def dict(self):
        return {
            "name": self.name,
            "n": self.n,
            "s": self.s,
            "t": self.t,
            "exact": self.exact,
            "costs": [fraction_str(self.costs[u][v]) for u, v in edge_table(self.n)],
        }


class HamPath:
    def __init__(self, order, cost):
        self.order = list(order)
        self.cost = cost

    def dict(self):
        return {"order": self.order, "cost": fraction_str(self.cost)}


# ---------------------------------------------------------------------------
# LP solution and narrow cuts
# ---------------------------------------------------------------------------

class FractionalSolution:
    """Sparse nonnegative edge vector x with its cost."""

    def __init__(self, n, x, value, exact=True, rounds=0, pool_size=0):
        self.n = n
        self.x = {e: val for e, val in sorted(x.items()) if val != 0}
        self.value = value
        self.exact = exact
        self.rounds = rounds
        self.pool_size = pool_size

    def support(self):
        return sorted(self.x)

    def total(self):
        return sum(self.x.values(), Fraction(0))

    def dict(self):
        return {
            "edges": [[*edge_endpoints(e, self.n), fraction_str(val)] for e, val in self.x.items()],
            "value": fraction_str(self.value),
        }

    @classmethod
    def from_dict(cls, data, n):
        x = {edge_index(u, v, n): to_fraction(val) for u, v, val in data["edges"]}
        return cls(n, x, to_fraction(data["value"]), exact=True)


class Violation:
    """A violated LP row: a degree equality at one city or a cut lower bound."""

    def __init__(self, kind, cities, value, bound):
        self.kind = kind
        self.cities = frozenset(cities)
        self.value = value
        self.bound = bound

    @property
    def amount(self):
        if self.kind == "degree":
            return abs(self.value - self.bound)
        return self.bound - self.value

    def key(self):
        return (self.kind, tuple(sorted(self.cities)))

    def dict(self):
        return {
            "kind": self.kind,
            "cities": sorted(self.cities),
            "value": fraction_str(self.value),
            "bound": fraction_str(self.bound),
            "amount": fraction_str(self.amount),
        }


class FeasibilityReport:
    def __init__(self, degree_violations, cut_violation, exhaustive_violation=None, exhaustive=False):
        self.degree_violations = list(degree_violations)
        self.cut_violation = cut_violation
        self.exhaustive_violation = exhaustive_violation
        self.exhaustive = exhaustive

    @property
    def worst(self):
        amounts = [v.amount for v in self.degree_violations]
        for v in (self.cut_violation, self.exhaustive_violation):
            if v is not None:
                amounts.append(v.amount)
        return max(amounts, default=0)

    @property
    def feasible(self):
        return not self.degree_violations and self.cut_violation is None and self.exhaustive_violation is None

    def dict(self):
        return {
            "feasible": self.feasible,
            "worst": fraction_str(self.worst),
            "degree": [v.dict() for v in self.degree_violations],
            "cut": self.cut_violation.dict() if self.cut_violation else None,
            "exhaustive": self.exhaustive,
        }


class NarrowCutChain:
    """Nested s-sides U_0 = {s} ⊂ ... ⊂ U_ell = V - {t} of all narrow cuts."""

    def __init__(self, levels, values, mode="exhaustive", boundary=False):
        self.levels = [frozenset(level) for level in levels]
        self.values = list(values)
        self.mode = mode
        self.boundary = boundary

    @property
    def ell(self):
        return len(self.levels) - 1

    def rows(self, theta=None):
        rows = []
        for i, (level, value) in enumerate(zip(self.levels, self.values)):
            row = {"size": len(level), "value": fraction_str(value)}
            if theta is not None:
                row["theta"] = theta.theta[i]
            rows.append(row)
        return rows

    def dict(self):
        return {
            "levels": [sorted(level) for level in self.levels],
            "values": [fraction_str(v) for v in self.values],
            "mode": self.mode,
            "boundary": self.boundary,
        }


# ---------------------------------------------------------------------------
# Tree distributions
# ---------------------------------------------------------------------------

def tree_key(tree):
    return tuple(sorted(tree))


class TreeDistribution:
    """Ordered (spanning tree, positive weight) blocks."""

    def __init__(self, n, blocks, total=Fraction(1)):
        self.n = n
        self.blocks = [(frozenset(tree), to_fraction(weight)) for tree, weight in blocks]
        self.total = to_fraction(total)

    def __len__(self):
        return len(self.blocks)

    def edge_vector(self):
        x = {}
        for tree, weight in self.blocks:
            for e in tree:
                x[e] = x.get(e, Fraction(0)) + weight
        return {e: val for e, val in sorted(x.items()) if val != 0}

    def weight_sum(self):
        return sum((w for _, w in self.blocks), Fraction(0))

    def dict(self):
        return [
            {
                "edges": [list(edge_endpoints(e, self.n)) for e in tree_key(tree)],
                "weight_num": weight.numerator,
                "weight_den": weight.denominator,
            }
            for tree, weight in self.blocks
        ]

    @classmethod
    def from_dict(cls, data, n, total=None):
        blocks = [
            (frozenset(edge_index(u, v, n) for u, v in item["edges"]),
             Fraction(item["weight_num"], item["weight_den"]))
            for item in data
        ]
        dist = cls(n, blocks)
        dist.total = dist.weight_sum() if total is None else to_fraction(total)
        return dist


class Block:
    """`count` identical copies of one spanning tree at consecutive virtual indices."""

    def __init__(self, tree, count):
        if count <= 0:
            raise ValueError(f"Block count must be positive, got {count}")
        self.tree = frozenset(tree)
        self.count = count

    def copy(self):
        return Block(self.tree, self.count)

    def __repr__(self):
        return f"Block({tree_key(self.tree)}, x{self.count})"


class RoundedEnsemble:
    """r virtual trees (uniform weight 1/r) stored as blocks, plus the leftover distribution."""

    def __init__(self, n, blocks, r, epsilon, leftover=None, kept_mass=Fraction(1)):
        self.n = n
        self.blocks = [b.copy() for b in blocks]
        self.r = r
        self.epsilon = to_fraction(epsilon)
        self.leftover = leftover if leftover is not None else TreeDistribution(n, [], total=0)
        self.kept_mass = to_fraction(kept_mass)
        if sum(b.count for b in self.blocks) != r:
            raise ValueError(f"Block counts sum to {sum(b.count for b in self.blocks)}, expected r={r}")

    @property
    def x(self):
        """Renormalized rounded vector (1/r) sum_j chi^{S_j}."""
        x = {}
        for block in self.blocks:
            for e in block.tree:
                x[e] = x.get(e, 0) + block.count
        return {e: Fraction(c, self.r) for e, c in sorted(x.items())}

    def counts_vector(self):
        x = {}
        for block in self.blocks:
            for e in block.tree:
                x[e] = x.get(e, 0) + block.count
        return dict(sorted(x.items()))

    def copy(self):
        return RoundedEnsemble(self.n, self.blocks, self.r, self.epsilon, self.leftover, self.kept_mass)

    def starts(self):
        """First virtual index (1-based) of every block."""
        starts, j = [], 1
        for block in self.blocks:
            starts.append(j)
            j += block.count
        return starts

    def canonical(self):
        """Blocks with adjacent identical trees merged; equal iff the virtual sequences agree."""
        merged = []
        for block in self.blocks:
            if merged and merged[-1][0] == block.tree:
                merged[-1][1] += block.count
            else:
                merged.append([block.tree, block.count])
        return [(tree_key(tree), count) for tree, count in merged]

    def dict(self):
        return {
            "n": self.n,
            "r": self.r,
            "epsilon": fraction_str(self.epsilon),
            "kept_mass": fraction_str(self.kept_mass),
            "blocks": [
                {"edges": [list(edge_endpoints(e, self.n)) for e in tree_key(b.tree)], "count": b.count}
                for b in self.blocks
            ],
            "leftover": self.leftover.dict(),
        }

    @classmethod
    def from_dict(cls, data):
        n = data["n"]
        blocks = [Block([edge_index(u, v, n) for u, v in item["edges"]], item["count"])
                  for item in data["blocks"]]
        leftover = TreeDistribution.from_dict(data.get("leftover", []), n)
        return cls(n, blocks, data["r"], to_fraction(data["epsilon"]), leftover,
                   to_fraction(data.get("kept_mass", "1")))


# ---------------------------------------------------------------------------
# Reassembly
# ---------------------------------------------------------------------------

class ThetaProfile:
    def __init__(self, theta, r, epsilon):
        self.theta = list(theta)
        self.r = r
        self.epsilon = to_fraction(epsilon)

    def active_cuts(self, j, ell):
        """Inner cut indices 1..ell-1 whose prefix must contain index j."""
        return [i for i in range(1, ell) if j <= self.theta[i]]

    def dict(self):
        return {"theta": self.theta, "r": self.r, "epsilon": fraction_str(self.epsilon)}


class SwapRecord:
    """One exchange S_j - e + f, S_k + e - f applied to `count` copies starting at j and k."""

    def __init__(self, j, k, count, cut, e, f, rule):
        self.j = j
        self.k = k
        self.count = count
        self.cut = cut
        self.e = e
        self.f = f
        self.rule = rule

    def dict(self):
        return {"j": self.j, "k": self.k, "count": self.count, "cut": self.cut,
                "e": self.e, "f": self.f, "rule": self.rule}

    @classmethod
    def from_dict(cls, data):
        return cls(data["j"], data["k"], data["count"], data["cut"], data["e"], data["f"], data["rule"])


class ExchangeTrace:
    def __init__(self, records=None):
        self.records = list(records or [])
        self.peak_blocks = 0

    def __len__(self):
        return len(self.records)

    def append(self, record):
        self.records.append(record)

    def to_jsonl(self):
        return "".join(json.dumps(r.dict(), sort_keys=True) + "\n" for r in self.records)

    @classmethod
    def from_jsonl(cls, text):
        return cls(SwapRecord.from_dict(json.loads(line)) for line in text.splitlines() if line.strip())


# ---------------------------------------------------------------------------
# Parity correction
# ---------------------------------------------------------------------------

class ParityTarget:
    """Cities whose degree in a tree has the wrong parity for an {s,t}-tour."""

    def __init__(self, cities):
        self.cities = frozenset(cities)
        if len(self.cities) % 2:
            raise ValueError(f"Wrong-parity set has odd size {len(self.cities)}")

    def __len__(self):
        return len(self.cities)

    def __iter__(self):
        return iter(sorted(self.cities))


class TourCandidate:
    def __init__(self, tree, join, path, tree_cost, join_cost, source="reassembled", label=None):
        self.tree = frozenset(tree)
        self.join = list(join)
        self.path = path
        self.tree_cost = tree_cost
        self.join_cost = join_cost
        self.source = source
        self.label = label

    @property
    def cost(self):
        return self.path.cost

    def dict(self):
        return {
            "source": self.source,
            "label": self.label,
            "tree_cost": fraction_str(self.tree_cost),
            "join_cost": fraction_str(self.join_cost),
            "path": self.path.dict(),
        }


# ---------------------------------------------------------------------------
# Analysis
# ---------------------------------------------------------------------------

BETA = Fraction(3327, 7654)
DELTA = Fraction(126, 1000)
BENEFIT_FACTOR = Fraction(3327, 1000)


class AnalysisParams:
    """beta with beta / (1 - 2 beta) = 3.327, delta = 0.126, and the two-level gamma."""

    def __init__(self, epsilon, r, beta=BETA, delta=DELTA):
        self.beta = to_fraction(beta)
        self.delta = to_fraction(delta)
        self.epsilon = to_fraction(epsilon)
        self.r = r
        if not (0 <= self.delta < Fraction(1, 2)):
            raise ValueError(f"delta must lie in [0, 1/2), got {self.delta}")
        if not (0 <= self.beta < Fraction(1, 2)):
            raise ValueError(f"beta must lie in [0, 1/2), got {self.beta}")

    @property
    def factor(self):
        return self.beta / (1 - 2 * self.beta)

    def gamma(self, j):
        return self.delta if 2 * j <= self.r else 1 - self.delta

    def guarantee(self):
        return 2 - self.beta + self.epsilon

    def dict(self):
        return {"beta": fraction_str(self.beta), "delta": fraction_str(self.delta),
                "epsilon": fraction_str(self.epsilon), "r": self.r}


class CutAudit:
    def __init__(self, index, value, epsilon, even_fraction, benefit, required):
        self.index = index
        self.value = value
        self.xi = value + epsilon
        self.even_fraction = even_fraction
        self.benefit = benefit
        self.required = required

    @property
    def passed(self):
        return self.benefit >= self.required

    @property
    def slack(self):
        return self.benefit - self.required

    def dict(self):
        return {
            "cut": self.index,
            "value": fraction_str(self.value),
            "xi": fraction_str(self.xi),
            "even_fraction": fraction_str(self.even_fraction),
            "benefit": fraction_str(self.benefit),
            "required": fraction_str(self.required),
            "pass": self.passed,
        }
