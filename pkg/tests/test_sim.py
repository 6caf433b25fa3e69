import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fluidnet.fixtures import RS_PRIORITY_PAIRS, rybko_stolyar, single_queue
from fluidnet.fluid import priority_from_pairs
from fluidnet.sim import (
    EventBudgetExceeded,
    NonIdlingError,
    Policy,
    PolicyError,
    SimError,
    SimState,
    SimTrace,
    Simulator,
    StaticPriority,
    builtin_policy,
    simulate,
    verify_trace,
)


class Lazy(Policy):
    """Idles station 0 whenever it could work."""

    def choose(self, sim, station, now):
        if station == 0:
            return None
        return next((k for k in sim.station_classes[station] if sim.q[k]), None)


class WrongStation(Policy):
    def choose(self, sim, station, now):
        return 0


@pytest.fixture(scope="module")
def sq_det():
    return single_queue(family="deterministic")


def rs_priority(rs):
    return StaticPriority(priority_from_pairs(rs, RS_PRIORITY_PAIRS))


def test_deterministic_sq_departures(sq_det):
    for horizon in (10.0, 57.3, 1000.0):
        tr = simulate(sq_det, builtin_policy("fifo"), None, horizon, seed=0, sample_dt=1.0)
        d = int(tr.D[-1, 0])
        assert math.floor(horizon) - 1 <= d <= math.floor(horizon)
        assert verify_trace(sq_det, tr).ok


def test_deterministic_lifo_matches_fifo(sq_det):
    a = simulate(sq_det, builtin_policy("fifo"), SimState([3]), 200.0, 5, sample_dt=1.0)
    b = simulate(sq_det, builtin_policy("lifo"), SimState([3]), 200.0, 5, sample_dt=1.0)
    assert np.array_equal(a.D, b.D)


@pytest.mark.parametrize("kind", ["fifo", "lifo", "gfifo", "static_priority"])
def test_byte_identical_reruns(rs, kind):
    order = priority_from_pairs(rs, RS_PRIORITY_PAIRS)
    a = simulate(rs, builtin_policy(kind, order), SimState([2, 1, 0, 3]), 300.0, 11, sample_dt=0.5)
    b = simulate(rs, builtin_policy(kind, order), SimState([2, 1, 0, 3]), 300.0, 11, sample_dt=0.5)
    assert a.to_csv() == b.to_csv()
    c = simulate(rs, builtin_policy(kind, order), SimState([2, 1, 0, 3]), 300.0, 12, sample_dt=0.5)
    assert a.to_csv() != c.to_csv()


def test_common_random_numbers(sq):
    # a single class has one service stream: fifo and lifo see identical work
    a = simulate(sq, builtin_policy("fifo"), None, 500.0, 3)
    b = simulate(sq, builtin_policy("lifo"), None, 500.0, 3)
    assert np.array_equal(a.q, b.q) and np.array_equal(a.times, b.times)


@pytest.mark.parametrize("kind", ["fifo", "lifo", "gfifo", "static_priority"])
def test_every_event_sampling_verifies(rs, kind):
    order = priority_from_pairs(rs, RS_PRIORITY_PAIRS)
    tr = simulate(rs, builtin_policy(kind, order), SimState([5, 0, 2, 0]), 100.0, 1)
    assert tr.times.size == tr.event_count + 2
    assert verify_trace(rs, tr).ok


def test_sq_law_of_large_numbers(sq):
    ok = 0
    for seed in range(10):
        tr = simulate(sq, builtin_policy("fifo"), None, 1e4, seed, sample_dt=100.0)
        ok += abs(tr.D[-1, 0] / 1e4 - 1.0) <= 0.05
    assert ok >= 9


def test_rs_priority_grows(rs):
    grew = 0
    for seed in range(20):
        tr = simulate(rs, rs_priority(rs), SimState([10, 0, 0, 0]), 2000.0, seed, sample_dt=100.0)
        grew += tr.norms()[-1] > 2 * tr.norms()[0] + 200
    assert grew >= 19


def test_residual_and_counting_identity(rs):
    order = priority_from_pairs(rs, RS_PRIORITY_PAIRS)
    sim = Simulator(rs, StaticPriority(order), SimState([6, 2, 3, 1]), 7, record_services=True)
    sim.run(400.0)
    assert sim.completion_log
    cum = [np.cumsum(s) for s in sim.services]
    for t, k, d, busy in sim.completion_log:
        # accumulated service across preemptions equals the sampled total
        assert busy == pytest.approx(cum[k][d - 1], rel=1e-12, abs=1e-9)
        # D = max{m : S^1 + ... + S^m <= T} up to event-time rounding
        m = int(np.searchsorted(cum[k], busy + 1e-9, side="right"))
        assert m == d


def test_residuals_respected():
    sq = single_queue(family="deterministic")
    tr = simulate(sq, builtin_policy("fifo"), SimState([1], z1=[0.25], z2=[0.1]), 1.0, 0)
    assert tr.times[1] == pytest.approx(0.1)  # first completion uses the residual
    assert tr.times[2] == pytest.approx(0.25)  # first arrival uses the residual


def test_state_validation(rs):
    with pytest.raises(SimError):
        SimState([1, 0, 0]).check(rs)
    with pytest.raises(SimError):
        SimState([0, 0, 0, 0], z2=[1.0, 0, 0, 0]).check(rs)
    with pytest.raises(SimError):
        SimState([0, 0, 0, 0], z1=[math.inf, 1.0]).check(rs)
    with pytest.raises(SimError):
        simulate(rs, builtin_policy("fifo"), None, 0.0, 0)


def test_idling_policy_guard(rs):
    with pytest.raises(NonIdlingError, match="non-idling violation"):
        simulate(rs, Lazy(), SimState([1, 0, 0, 0]), 10.0, 0)


def test_invalid_class_rejected(rs):
    with pytest.raises(PolicyError):
        simulate(rs, WrongStation(), SimState([0, 1, 0, 0]), 10.0, 0)


def test_incomplete_priority_order(rs):
    with pytest.raises(PolicyError):
        simulate(rs, StaticPriority([[0], [1, 2]]), None, 1.0, 0)
    with pytest.raises(PolicyError):
        builtin_policy("static_priority")
    with pytest.raises(PolicyError):
        builtin_policy("random")


def test_event_budget(rs):
    with pytest.raises(EventBudgetExceeded):
        simulate(rs, builtin_policy("fifo"), None, 1e6, 0, sample_dt=10.0, event_cap=100)
    tr = simulate(rs, builtin_policy("fifo"), None, 1e6, 0, sample_dt=10.0, max_events=100)
    assert tr.event_count == 100 and verify_trace(rs, tr).ok


def test_csv_round_trip(rs, tmp_path):
    tr = simulate(rs, builtin_policy("gfifo"), SimState([1, 2, 3, 4]), 50.0, 2, sample_dt=0.7, record_events=True)
    path = tmp_path / "t.csv"
    tr.write_csv(path)
    back = SimTrace.read_csv(path)
    assert back.to_csv() == tr.to_csv()
    assert verify_trace(rs, back).ok
    tr.write_events(tmp_path / "e.jsonl")
    kinds = {ev[1] for ev in tr.events}
    assert {"arrival", "completion"} <= kinds


def tampered(rs):
    return simulate(rs, rs_priority(rs), SimState([4, 1, 1, 4]), 200.0, 9, sample_dt=1.0)


def test_tampered_departures_rejected(rs):
    tr = tampered(rs)
    tr.D[40:, 1] += 1
    rep = verify_trace(rs, tr)
    assert any(v.startswith("conservation violation") for v in rep.violations)


def test_excess_busy_time_rejected(rs):
    tr = tampered(rs)
    tr.T[60:, 0] += 0.5
    tr.T[60:, 3] += 0.6
    rep = verify_trace(rs, tr)
    assert any(v.startswith("feasibility violation") for v in rep.violations)


def test_missing_busy_time_rejected(rs):
    tr = tampered(rs)
    r = int(np.nonzero(tr.minq[1:, 0] > 0)[0][0]) + 1
    tr.T[r:, 0] -= 0.3
    rep = verify_trace(rs, tr)
    assert any(v.startswith("non-idling violation") for v in rep.violations)


def test_negative_queue_and_decreasing_cumulative(rs):
    tr = tampered(rs)
    tr.A[50, 0] -= 100
    rep = verify_trace(rs, tr)
    assert "cumulative A decreases" in rep.violations


@settings(max_examples=25, deadline=None)
@given(
    q0=st.lists(st.integers(0, 6), min_size=4, max_size=4),
    seed=st.integers(0, 2**31),
    kind=st.sampled_from(["fifo", "lifo", "gfifo", "static_priority"]),
    family=st.sampled_from(["exponential", "erlang", "uniform-bounded", "deterministic"]),
)
def test_random_runs_verify(q0, seed, kind, family):
    net = rybko_stolyar(family=family)
    order = priority_from_pairs(net, RS_PRIORITY_PAIRS)
    tr = simulate(net, builtin_policy(kind, order), SimState(q0), 60.0, seed, sample_dt=0.5)
    rep = verify_trace(net, tr)
    assert rep.ok, rep.violations[:3]
