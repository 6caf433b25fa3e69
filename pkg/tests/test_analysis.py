import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fluidnet.analysis import (
    AnalysisError,
    closeness_report,
    divergence_estimate,
    is_nondecreasing,
    rate_stability_estimate,
)
from fluidnet.fixtures import single_queue
from fluidnet.fluid import FluidSolution
from fluidnet.sim import SimState, SimTrace, builtin_policy, simulate
from fluidnet.tracker import build_allocation_plan, plan_from_solution, tracker_policy


def linear_trace(a, times):
    times = np.asarray(times, dtype=float)
    q = np.round(a * times)[:, None].astype(np.int64)
    z = np.zeros_like(q)
    return SimTrace(times, q, z, z, z.astype(float), z, seed=0)


def test_divergence_zero_and_unit():
    t = np.arange(0, 101, dtype=float)
    assert divergence_estimate(linear_trace(0.0, t)) == 0.0
    assert divergence_estimate(linear_trace(1.0, t)) == 1.0


@settings(max_examples=30, deadline=None)
@given(a=st.integers(1, 20), c=st.integers(1, 1000))
def test_divergence_time_scale_invariance(a, c):
    # Q(t) = a t sampled on a time axis stretched by c
    t = c * np.arange(0, 201, dtype=float)
    assert divergence_estimate(linear_trace(a, t)) == a


def test_divergence_window_guard():
    tr = linear_trace(1.0, [0.0, 1.0])
    with pytest.raises(AnalysisError):
        divergence_estimate(tr, 1.0)
    with pytest.raises(AnalysisError):
        divergence_estimate(linear_trace(1.0, [0.0]))


def test_stability_sq(sq):
    traces = [simulate(sq, builtin_policy("fifo"), None, 1e4, s, sample_dt=100.0) for s in range(8)]
    rep = rate_stability_estimate(traces, sq, tol=0.05)
    assert rep.verdict == "rate-stable evidence" and rep.stable_fraction == 1.0
    assert rep.sublinear.all()
    assert rep.to_json()["tol"] == [0.05]
    default = rate_stability_estimate(traces, sq)
    assert default.tol == [pytest.approx(0.03)]


def test_stability_reproducible_from_csv(sq, tmp_path):
    traces = [simulate(sq, builtin_policy("fifo"), None, 500.0, s, sample_dt=5.0) for s in range(3)]
    back = [SimTrace.from_csv(tr.to_csv()) for tr in traces]
    a = rate_stability_estimate(traces, sq).to_json()
    b = rate_stability_estimate(back, sq).to_json()
    assert a == b


def test_stability_guards(sq):
    with pytest.raises(AnalysisError):
        rate_stability_estimate([], sq)
    a = simulate(sq, builtin_policy("fifo"), None, 10.0, 0)
    b = simulate(sq, builtin_policy("fifo"), None, 20.0, 0)
    with pytest.raises(AnalysisError):
        rate_stability_estimate([a, b], sq)


def test_rs_priority_not_rate_stable(rs):
    from fluidnet.fixtures import RS_PRIORITY_PAIRS
    from fluidnet.fluid import priority_from_pairs

    order = priority_from_pairs(rs, RS_PRIORITY_PAIRS)
    traces = [simulate(rs, builtin_policy("static_priority", order), SimState([50, 0, 0, 0]), 3000.0, s, sample_dt=10.0) for s in range(5)]
    rep = rate_stability_estimate(traces, rs)
    assert rep.verdict == "not rate-stable" and rep.quantile(0.05) > 0


def sq_control(n, theta=2.0, seed=0, cap=100):
    net = single_queue(family="deterministic")
    unit = FluidSolution(np.array([0.0, 1.0, theta]), np.array([[1.0], [0.0], [0.0]]), np.array([[0.0], [1.0], [1.0 + 0.5 * (theta - 1)]]))
    plan = plan_from_solution(net, unit, n, theta / cap)
    tr = simulate(net, tracker_policy(plan), SimState([n]), plan.theta0, seed, sample_dt=0.25)
    return net, plan, tr


def test_deterministic_sq_control():
    net, plan, tr = sq_control(100)
    rep = closeness_report([tr], plan, plan.fluid, net)
    assert rep.fraction_practical == 1.0 and rep.fraction_eps == 1.0
    assert rep.max_dev.max() <= 1.0
    assert len(rep.rows()) == plan.grid.size


def test_closeness_mismatch():
    net, plan, tr = sq_control(50)
    bad = dataclasses.replace(plan, delta=plan.delta * 2)
    with pytest.raises(AnalysisError):
        closeness_report([tr], bad, plan.fluid, net)
    other = dataclasses.replace(plan.fluid, breakpoints=plan.fluid.breakpoints * 2)
    with pytest.raises(AnalysisError):
        closeness_report([tr], plan, other, net)
    with pytest.raises(AnalysisError):
        closeness_report([], plan, plan.fluid, net)


def test_closeness_rs_shape(rs, witness):
    plan = build_allocation_plan(rs, witness, [25, 25, 25, 25], practical_cap=100)
    traces = [simulate(rs, tracker_policy(plan), SimState([25] * 4), plan.theta0, s, sample_dt=5.0) for s in range(3)]
    rep = closeness_report(traces, plan, plan.fluid, rs)
    assert rep.max_dev.shape == (3, plan.grid.size)
    assert rep.fraction_strict == 0.0 and rep.fraction_practical == 1.0
    s = rep.summary()
    assert s["seeds"] == 3 and s["n"] == 100.0


def test_is_nondecreasing():
    assert is_nondecreasing([0.0, 0.0, 0.5, 1.0])
    assert not is_nondecreasing([0.2, 0.1])
