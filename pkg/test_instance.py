#!/usr/bin/env python3

from fractions import Fraction

import pytest

from gaotour.instance import (
    brute_force_opt, dump_instance, is_metric, metric_closure, parse_instance, random_metric, relabel,
)
from gaotour.models import Instance, UnsupportedFormatError


def line_instance(n=4):
    return Instance(n, [[abs(i - j) for j in range(n)] for i in range(n)], 0, n - 1, name=f"line-{n}")


EUC = """NAME : pair
TYPE : TSP
DIMENSION : 2
EDGE_WEIGHT_TYPE : EUC_2D
NODE_COORD_SECTION
1 0 0
2 3 4
EOF
"""


def test_parse_euclidean_rounds_to_nearest_integer():
    inst = parse_instance(EUC)
    print(f"parsed {inst.name}: c(0,1) = {inst.cost(0, 1)}")
    assert inst.n == 2
    assert inst.cost(0, 1) == 5
    assert (inst.s, inst.t) == (0, 1)


def test_parse_full_matrix_is_returned_unchanged():
    text = """NAME : tri
DIMENSION : 3
EDGE_WEIGHT_TYPE : EXPLICIT
EDGE_WEIGHT_FORMAT : FULL_MATRIX
EDGE_WEIGHT_SECTION
0 1 2
1 0 1
2 1 0
EOF
"""
    inst = parse_instance(text)
    assert [list(row) for row in inst.costs] == [[0, 1, 2], [1, 0, 1], [2, 1, 0]]
    assert inst.raw_costs == inst.costs


def test_parse_rejects_geo():
    text = EUC.replace("EUC_2D", "GEO")
    with pytest.raises(UnsupportedFormatError, match="unsupported format"):
        parse_instance(text)


def test_parse_bytes_must_be_utf8():
    assert parse_instance(EUC.encode("utf-8")).n == 2
    with pytest.raises(UnsupportedFormatError, match="not valid UTF-8") as info:
        parse_instance(EUC.encode("utf-8").replace(b"NAME : pair", b"NAME : pa\xffir"))
    assert info.value.stage == "parse"


def test_parse_short_full_matrix():
    text = """DIMENSION : 3
EDGE_WEIGHT_TYPE : EXPLICIT
EDGE_WEIGHT_FORMAT : FULL_MATRIX
EDGE_WEIGHT_SECTION
0 1 2
1 0 1
EOF
"""
    with pytest.raises(ValueError, match="non-square"):
        parse_instance(text)


def test_parse_applies_closure_and_keeps_raw_weights():
    text = """DIMENSION : 3
EDGE_WEIGHT_TYPE : EXPLICIT
EDGE_WEIGHT_FORMAT : UPPER_ROW
EDGE_WEIGHT_SECTION
1 10
1
EOF
"""
    inst = parse_instance(text)
    assert inst.cost(0, 2) == 2
    assert inst.raw_costs[0][2] == 10


def test_metric_closure():
    closed = metric_closure([[0, 1, 10], [1, 0, 1], [10, 1, 0]])
    assert closed[0][2] == 2
    assert is_metric(closed)
    metric = [[0, 1, 2], [1, 0, 1], [2, 1, 0]]
    assert metric_closure(metric) == metric
    with pytest.raises(ValueError):
        metric_closure([[0, -1], [-1, 0]])


def test_native_json_round_trip_keeps_endpoints():
    inst = Instance(3, [[0, 2, 3], [2, 0, 1], [3, 1, 0]], 2, 0, name="native")
    again = parse_instance(dump_instance(inst), fmt="native-json")
    assert (again.s, again.t, again.name) == (2, 0, "native")
    assert again.costs == inst.costs


def test_brute_force_line():
    path = brute_force_opt(line_instance(4))
    print(f"line-4 OPT: {path.order} cost {path.cost}")
    assert path.order == [0, 1, 2, 3]
    assert path.cost == 3


def test_brute_force_two_cities_and_cap():
    inst = Instance(2, [[0, 7], [7, 0]], 0, 1)
    assert brute_force_opt(inst).cost == 7
    with pytest.raises(ValueError):
        brute_force_opt(random_metric(1, 13, "random-closure"), max_n=12)


@pytest.mark.parametrize("kind", ["euclidean", "graph-metric", "random-closure"])
def test_random_metric_is_deterministic_and_metric(kind):
    a = random_metric(7, 8, kind)
    b = random_metric(7, 8, kind)
    assert a.costs == b.costs
    assert is_metric([list(row) for row in a.costs])
    assert (a.s, a.t) == (0, 7)


def test_graph_metric_costs_are_positive_integers():
    inst = random_metric(3, 9, "graph-metric")
    for e in inst.edges():
        c = inst.edge_cost(e)
        assert isinstance(c, Fraction) and c.denominator == 1 and c >= 1


def test_relabel_keeps_opt():
    inst = random_metric(5, 7, "random-closure")
    perm = [3, 0, 6, 1, 5, 2, 4]
    assert brute_force_opt(relabel(inst, perm)).cost == brute_force_opt(inst).cost


def test_instance_rejects_bad_input():
    with pytest.raises(ValueError):
        Instance(3, [[0, 1, 10], [1, 0, 1], [10, 1, 0]], 0, 2)
    with pytest.raises(ValueError):
        Instance(2, [[0, 1], [1, 0]], 1, 1)
