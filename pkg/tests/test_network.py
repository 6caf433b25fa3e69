import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fluidnet.fixtures import rybko_stolyar, single_queue
from fluidnet.network import (
    DistSpec,
    NetworkSpec,
    SpecError,
    derived_constants,
    simple_network,
    validate_network,
)


def test_sq_valid(sq):
    assert validate_network(sq).ok


def test_sq_zero_rate_rejected():
    net = simple_network([[0]], [1.0], [[2.0]])
    bad = NetworkSpec.from_json(
        json.loads(json.dumps(net.to_json()).replace('"mu": 2.0', '"mu": 0.0'))
    )
    rep = validate_network(bad)
    assert any("rate must be positive" in v for v in rep.violations)


def test_rs_valid(rs):
    assert validate_network(rs).ok
    assert rs.d == 4 and rs.J == 2
    assert rs.stations == [[0, 3], [1, 2]]


def test_mean_mismatch_flagged():
    obj = single_queue().to_json()
    obj["types"][0]["arrival"]["params"] = [2.0]
    rep = validate_network(NetworkSpec.from_json(obj))
    assert any("mean" in v for v in rep.violations)


def test_route_out_of_range():
    obj = single_queue().to_json()
    obj["types"][0]["route"] = [1]
    assert not validate_network(NetworkSpec.from_json(obj)).ok


def test_reentrant_route_allowed():
    net = simple_network([[0, 1, 0]], [1.0], [[5.0, 5.0, 5.0]], stations=2)
    assert validate_network(net).ok
    assert net.stations[0] == [0, 2]


def test_unknown_key_rejected():
    obj = single_queue().to_json()
    obj["extra"] = 1
    with pytest.raises(SpecError):
        NetworkSpec.from_json(obj)


def test_json_round_trip(rs, tmp_path):
    p = tmp_path / "rs.json"
    rs.dump(p)
    assert NetworkSpec.load(p) == rs


def test_bounded_services_warn():
    net = simple_network([[0]], [1.0], [[2.0]], family="deterministic")
    rep = validate_network(net)
    assert rep.ok and rep.warnings


def test_constants_sq(sq):
    c = derived_constants(sq)
    assert (c.lambda_max, c.mu_max, c.j_max, c.c_big) == (1.0, 2.0, 1, 118.0)


def test_constants_rs(rs):
    c = derived_constants(rs)
    assert (c.lambda_max, c.mu_max, c.j_max, c.c_big) == (1.0, 6.0, 2, 10193.0)


def test_constants_unit_rates():
    assert derived_constants(simple_network([[0]], [1.0], [[1.0]])).c_big == 53.0


rates = st.floats(0.05, 20.0, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(lam=rates, mu1=rates, mu2=rates)
def test_constants_reciprocal_invariance(lam, mu1, mu2):
    a = derived_constants(simple_network([[0, 1]], [lam], [[mu1, mu2]], stations=2))
    b = derived_constants(simple_network([[0, 1]], [1 / lam], [[1 / mu1, 1 / mu2]], stations=2))
    assert math.isclose(a.lambda_max, b.lambda_max)
    assert math.isclose(a.mu_max, b.mu_max)


@settings(max_examples=50, deadline=None)
@given(lam=rates, mus=st.lists(rates, min_size=1, max_size=4))
def test_c_big_dominates_total_rate(lam, mus):
    net = simple_network([list(range(len(mus)))], [lam], [mus], stations=len(mus))
    c = derived_constants(net)
    assert c.c_big > 13 * (c.lambda_max + c.mu_max) ** 2 * net.I * c.j_max**3
    assert c.c_big > lam + sum(mus)


def test_dist_parse():
    assert DistSpec.parse("erlang:3,3") == DistSpec("erlang", (3, 3))
    assert DistSpec.parse('{"family": "exponential", "params": [2]}').mean == 0.5
