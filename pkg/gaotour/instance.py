"""Instance ingestion, metric closure, random generation and the exact OPT oracle."""

import json
import logging
import math
from fractions import Fraction

import networkx as nx
import numpy as np

from gaotour.models import (
    HamPath, Instance, UnsupportedFormatError, edge_table, fraction_str, to_fraction,
    triangle_violation,
)

logger = logging.getLogger(__name__)

FORMATS = ("tsplib", "native-json")
RANDOM_KINDS = ("euclidean", "graph-metric", "random-closure")


def _number(token):
    """Parse a TSPLIB/JSON number, keeping integers integral."""
    if isinstance(token, (int, float)) and not isinstance(token, bool):
        return token
    token = str(token).strip()
    if "/" in token:
        return Fraction(token)
    value = float(token)
    return int(value) if value.is_integer() and "." not in token and "e" not in token.lower() else value


def _lift(matrix, exact):
    """Exact rationals for integral input (or when forced); doubles otherwise."""
    integral = all(isinstance(c, (int, Fraction)) for row in matrix for c in row)
    if integral or exact:
        return [[to_fraction(c) for c in row] for row in matrix]
    return [[float(c) for c in row] for row in matrix]


def _read_numbers(lines, start, count):
    values, i = [], start
    while len(values) < count and i < len(lines):
        line = lines[i].strip()
        if not line or line.upper().startswith(("EOF", "DISPLAY_DATA_SECTION", "TOUR_SECTION")):
            break
        values.extend(_number(tok) for tok in line.split())
        i += 1
    return values, i


def _parse_tsplib(text):
    lines = text.splitlines()
    name, n, ew_type, ew_format = "tsplib", None, None, None
    matrix = None
    i = 0
    while i < len(lines):
        s = lines[i].strip()
        up = s.upper()
        i += 1
        if not s or up == "EOF":
            continue
        key, _, value = s.partition(":")
        key = key.strip().upper()
        value = value.strip()
        if key == "NAME":
            name = value or name
        elif key == "DIMENSION":
            n = int(value)
        elif key == "EDGE_WEIGHT_TYPE":
            ew_type = value.upper()
            if ew_type not in ("EUC_2D", "EXPLICIT"):
                raise UnsupportedFormatError(f"unsupported format: EDGE_WEIGHT_TYPE {ew_type}", stage="parse")
        elif key == "EDGE_WEIGHT_FORMAT":
            ew_format = value.upper()
            if ew_format not in ("FULL_MATRIX", "UPPER_ROW"):
                raise UnsupportedFormatError(f"unsupported format: EDGE_WEIGHT_FORMAT {ew_format}", stage="parse")
        elif up.startswith("NODE_COORD_SECTION"):
            if n is None:
                raise ValueError("DIMENSION not found before NODE_COORD_SECTION")
            if ew_type != "EUC_2D":
                raise UnsupportedFormatError(f"unsupported format: NODE_COORD_SECTION with {ew_type}", stage="parse")
            coords = []
            for _ in range(n):
                parts = lines[i].split()
                i += 1
                if len(parts) < 3:
                    raise ValueError(f"Invalid NODE_COORD_SECTION line: {' '.join(parts)!r}")
                coords.append((float(parts[-2]), float(parts[-1])))
            # TSPLIB nint() of the Euclidean distance
            matrix = [[int(math.hypot(x1 - x2, y1 - y2) + 0.5) for (x2, y2) in coords] for (x1, y1) in coords]
        elif up.startswith("EDGE_WEIGHT_SECTION"):
            if n is None:
                raise ValueError("DIMENSION not found before EDGE_WEIGHT_SECTION")
            fmt = ew_format or "FULL_MATRIX"
            if fmt == "FULL_MATRIX":
                values, i = _read_numbers(lines, i, n * n)
                if len(values) != n * n:
                    raise ValueError(f"non-square matrix: expected {n * n} weights, got {len(values)}")
                matrix = [values[row * n:(row + 1) * n] for row in range(n)]
            else:
                need = n * (n - 1) // 2
                values, i = _read_numbers(lines, i, need)
                if len(values) != need:
                    raise ValueError(f"UPPER_ROW needs {need} weights, got {len(values)}")
                matrix = [[0] * n for _ in range(n)]
                for (u, v), w in zip(edge_table(n), values):
                    matrix[u][v] = matrix[v][u] = w
    if matrix is None:
        raise UnsupportedFormatError(f"unsupported format: no NODE_COORD_SECTION or EDGE_WEIGHT_SECTION "
                                     f"(EDGE_WEIGHT_TYPE {ew_type})", stage="parse")
    return name, matrix, None, None


def _parse_native(text):
    data = json.loads(text)
    n = int(data["n"])
    weights = [_number(w) for w in data["costs"]]
    if len(weights) != n * (n - 1) // 2:
        raise ValueError(f"non-square matrix: upper triangle of n={n} needs {n * (n - 1) // 2} costs, "
                         f"got {len(weights)}")
    matrix = [[0] * n for _ in range(n)]
    for (u, v), w in zip(edge_table(n), weights):
        matrix[u][v] = matrix[v][u] = w
    return data.get("name", "instance"), matrix, data.get("s"), data.get("t")


def parse_instance(text, fmt="tsplib", s=None, t=None, exact=False):
    """Parse a TSPLIB or native JSON document into a metric Instance."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as e:
            raise UnsupportedFormatError(f"instance is not valid UTF-8: {e}", stage="parse") from e
    if fmt == "tsplib":
        name, matrix, doc_s, doc_t = _parse_tsplib(text)
    elif fmt == "native-json":
        name, matrix, doc_s, doc_t = _parse_native(text)
    else:
        raise UnsupportedFormatError(f"unsupported format: {fmt}", stage="parse")

    n = len(matrix)
    if n < 2:
        raise ValueError(f"Need at least 2 cities, got n={n}")
    s = s if s is not None else (doc_s if doc_s is not None else 0)
    t = t if t is not None else (doc_t if doc_t is not None else n - 1)
    if s == t:
        raise ValueError(f"Endpoints must differ: s=t={s}")

    raw = _lift(matrix, exact)
    costs = raw
    if triangle_violation(raw) is not None:
        logger.info(f"Instance {name}: raw weights violate the triangle inequality, applying metric closure")
        costs = metric_closure(raw)
    return Instance(n, costs, s, t, name=name, raw_costs=raw)


def _check_raw(costs):
    n = len(costs)
    if any(len(row) != n for row in costs):
        raise ValueError("non-square matrix")
    for u in range(n):
        if costs[u][u] != 0:
            raise ValueError(f"Nonzero diagonal at city {u}")
        for v in range(n):
            if costs[u][v] < 0:
                raise ValueError(f"Negative cost at ({u},{v}): {costs[u][v]}")
            if costs[u][v] != costs[v][u]:
                raise ValueError(f"Asymmetric costs at ({u},{v})")


def metric_closure(costs):
    """All-pairs shortest-path matrix of a symmetric nonnegative cost matrix."""
    _check_raw(costs)
    n = len(costs)
    graph = nx.Graph()
    graph.add_nodes_from(range(n))
    for u, v in edge_table(n):
        graph.add_edge(u, v, weight=costs[u][v])
    dist = nx.floyd_warshall(graph, weight="weight")
    closed = [[min(costs[u][v], dist[u][v]) if u != v else costs[u][v] for v in range(n)] for u in range(n)]
    if all(isinstance(c, (int, Fraction)) for row in costs for c in row):
        closed = [[to_fraction(c) for c in row] for row in closed]
    return closed


def is_metric(costs):
    return triangle_violation(costs) is None


def brute_force_opt(inst, max_n=12):
    """Minimum-cost Hamiltonian s-t path by Held-Karp subset DP."""
    n, s, t = inst.n, inst.s, inst.t
    if n > max_n:
        raise ValueError(f"Brute force capped at n={max_n}, instance has n={n}")
    interior = [v for v in range(n) if v not in (s, t)]
    m = len(interior)
    # Fractions, same arithmetic as Instance.vector_cost
    c = [[inst.exact_edge_cost(inst.edge_id(u, v)) if u != v else Fraction(0) for v in range(n)] for u in range(n)]
    if m == 0:
        return HamPath([s, t], c[s][t])

    full = (1 << m) - 1
    dp = [[None] * m for _ in range(1 << m)]
    parent = [[-1] * m for _ in range(1 << m)]
    for i, v in enumerate(interior):
        dp[1 << i][i] = c[s][v]
    for mask in range(1, full + 1):
        row = dp[mask]
        for i in range(m):
            if row[i] is None:
                continue
            for j in range(m):
                if mask & (1 << j):
                    continue
                nxt = mask | (1 << j)
                cand = row[i] + c[interior[i]][interior[j]]
                if dp[nxt][j] is None or cand < dp[nxt][j]:
                    dp[nxt][j] = cand
                    parent[nxt][j] = i

    best, last = None, -1
    for i in range(m):
        cand = dp[full][i] + c[interior[i]][t]
        if best is None or cand < best:
            best, last = cand, i

    order, mask = [], full
    while last != -1:
        order.append(interior[last])
        last, mask = parent[mask][last], mask ^ (1 << last)
    order.reverse()
    return HamPath([s] + order + [t], best)


def random_metric(seed, n, kind="euclidean", exact=False):
    """Deterministic random metric instance for fixed (seed, n, kind)."""
    if n < 2:
        raise ValueError(f"Need at least 2 cities, got n={n}")
    if kind not in RANDOM_KINDS:
        raise ValueError(f"Unknown instance kind {kind!r}; expected one of {RANDOM_KINDS}")
    rng = np.random.default_rng(seed)

    if kind == "euclidean":
        pts = rng.integers(0, 100, size=(n, 2))
        matrix = [[math.hypot(int(pts[u][0] - pts[v][0]), int(pts[u][1] - pts[v][1])) for v in range(n)]
                  for u in range(n)]
        costs = _lift(matrix, exact)
        if triangle_violation(costs) is not None:
            costs = metric_closure(costs)
    elif kind == "graph-metric":
        graph = nx.Graph()
        graph.add_nodes_from(range(n))
        for v in range(1, n):
            graph.add_edge(v, int(rng.integers(0, v)))
        for u, v in edge_table(n):
            if rng.random() < 0.3:
                graph.add_edge(u, v)
        dist = dict(nx.all_pairs_shortest_path_length(graph))
        costs = [[Fraction(dist[u][v]) for v in range(n)] for u in range(n)]
    else:
        matrix = [[0] * n for _ in range(n)]
        for u, v in edge_table(n):
            matrix[u][v] = matrix[v][u] = int(rng.integers(1, 101))
        costs = metric_closure(_lift(matrix, True))

    return Instance(n, costs, 0, n - 1, name=f"{kind}-n{n}-seed{seed}")


def relabel(inst, perm):
    """Same instance with city v renamed perm[v]."""
    n = inst.n
    if sorted(perm) != list(range(n)):
        raise ValueError(f"Not a permutation of 0..{n - 1}: {perm}")
    costs = [[0] * n for _ in range(n)]
    for u in range(n):
        for v in range(n):
            costs[perm[u]][perm[v]] = inst.costs[u][v]
    return Instance(n, costs, perm[inst.s], perm[inst.t], name=f"{inst.name}-relabeled")


def dump_instance(inst):
    """Native JSON text: {name, n, s, t, costs: row-major upper triangle}."""
    def encode(c):
        if isinstance(c, float):
            return c
        c = to_fraction(c)
        return c.numerator if c.denominator == 1 else fraction_str(c)

    data = {
        "name": inst.name,
        "n": inst.n,
        "s": inst.s,
        "t": inst.t,
        "costs": [encode(inst.costs[u][v]) for u, v in edge_table(inst.n)],
    }
    return json.dumps(data, sort_keys=True)
