import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import sq_drain
from fluidnet.fixtures import RS_PRIORITY_PAIRS
from fluidnet.fluid import (
    FluidError,
    FluidSolution,
    PartialSolution,
    check_all,
    check_non_idling,
    linearize_segment,
    priority_from_pairs,
    scale_solution,
    simulate_priority_fluid,
    station_queue,
    total_queue,
    validate_fluid_solution,
    zero_solution,
)
from fluidnet.network import derived_constants


def euler_sq(q0, horizon, dt=1e-4, lam=1.0, mu=2.0):
    """Independent fine-grid integrator for the single queue at full effort."""
    n = int(round(horizon / dt))
    q, T = q0, 0.0
    qs, Ts = [q], [T]
    for _ in range(n):
        rate = 1.0 if q > 1e-12 else min(1.0, lam / mu)
        T += rate * dt
        q = max(q + lam * dt - mu * rate * dt, 0.0)
        qs.append(q)
        Ts.append(T)
    return np.arange(n + 1) * dt, np.array(qs), np.array(Ts)


def test_zero_solution_valid(sq):
    sol = zero_solution(sq, 10.0)
    assert np.allclose(sol.t[-1], [5.0])
    assert validate_fluid_solution(sq, sol).ok
    assert check_non_idling(sq, sol).ok


def test_drain_matches_fine_grid(sq):
    sol = sq_drain()
    assert check_all(sq, sol).ok
    t, q, T = euler_sq(4.0, 10.0)
    assert np.abs(sol.queues_at(t)[:, 0] - q).max() < 1e-3
    assert np.abs(sol.allocs_at(t)[:, 0] - T).max() < 1e-3


def test_slope_above_one_infeasible(sq):
    sol = FluidSolution(np.array([0.0, 2.0]), np.array([[4.0], [3.0]]), np.array([[0.0], [3.0]]))
    assert "station feasibility" in validate_fluid_solution(sq, sol).kinds()


def test_idling_with_queue_flagged(sq):
    # slope 0.9: q decreases at 2*0.9 - 1 = 0.8
    sol = FluidSolution(np.array([0.0, 1.0]), np.array([[4.0], [3.2]]), np.array([[0.0], [0.9]]))
    assert validate_fluid_solution(sq, sol).ok
    rep = check_non_idling(sq, sol)
    assert not rep.ok and rep.violations[0].where == 0


def test_full_effort_drain_is_non_idling(sq):
    assert check_non_idling(sq, sq_drain()).ok


def test_negative_queue_flagged(sq):
    sol = FluidSolution(np.array([0.0, 1.0]), np.array([[0.0], [-1.0]]), np.array([[0.0], [1.0]]))
    assert "negative queue" in validate_fluid_solution(sq, sol).kinds()


def test_dimension_mismatch(rs):
    with pytest.raises(FluidError):
        validate_fluid_solution(rs, sq_drain())


def test_scale_identity_and_round_trip(sq):
    sol = sq_drain()
    same = scale_solution(sol, 1.0)
    assert np.array_equal(same.q, sol.q) and np.array_equal(same.breakpoints, sol.breakpoints)
    back = scale_solution(scale_solution(sol, 0.5), 2.0)
    assert np.abs(back.q - sol.q).max() < 1e-12
    assert np.abs(back.t - sol.t).max() < 1e-12


def test_scale_by_two_drains_from_eight(sq):
    sol = scale_solution(sq_drain(), 2.0)
    assert sol.queue_at(0.0)[0] == 8.0 and sol.end == 20.0
    assert sol.queue_at(8.0)[0] == 0.0
    assert check_all(sq, sol).ok


@pytest.mark.parametrize("beta", [0.5, 2.0, 10.0])
def test_scaling_commutes_with_validation(sq, beta):
    good = sq_drain()
    bad = FluidSolution(np.array([0.0, 1.0]), np.array([[4.0], [3.2]]), np.array([[0.0], [0.9]]))
    assert check_all(sq, scale_solution(good, beta)).ok
    assert not check_all(sq, scale_solution(bad, beta)).ok


def test_scale_rejects_nonpositive(sq):
    with pytest.raises(FluidError):
        scale_solution(sq_drain(), 0.0)


def test_linearize_fixed_point(sq):
    sol = sq_drain()
    lin = linearize_segment(sol, 0.0, 4.0)
    assert np.array_equal(lin.q, sol.q) and np.array_equal(lin.t, sol.t)


def test_linearize_full_domain(sq):
    lin = linearize_segment(sq_drain(), 0.0, 10.0)
    assert lin.segments == 1
    assert validate_fluid_solution(sq, lin).ok
    assert np.allclose(lin.t[-1], [7.0])


def test_linearize_positive_station_keeps_non_idling(rs):
    order = priority_from_pairs(rs, RS_PRIORITY_PAIRS)
    sol = simulate_priority_fluid(rs, order, [0, 1, 0, 1], 30.0)
    # pick a window where station B stays positive and station A is zero at both ends
    lin = linearize_segment(sol, sol.breakpoints[1], sol.breakpoints[3])
    assert validate_fluid_solution(rs, lin).ok


def test_linearize_bad_interval(sq):
    with pytest.raises(FluidError):
        linearize_segment(sq_drain(), 3.0, 3.0)
    with pytest.raises(FluidError):
        linearize_segment(sq_drain(), 0.0, 11.0)


def test_priority_fluid_sq_drain(sq):
    sol = simulate_priority_fluid(sq, None, [4.0], 10.0)
    assert check_all(sq, sol).ok
    assert abs(sol.queue_at(4.0)[0]) < 1e-12
    assert abs(sol.queue_at(1.0)[0] - 3.0) < 1e-12
    assert sol.queue_at(10.0)[0] == 0.0


def test_priority_fluid_sq_from_zero(sq):
    sol = simulate_priority_fluid(sq, None, [0.0], 5.0)
    assert np.all(sol.q == 0)


def test_priority_fluid_rs_grows(rs):
    order = priority_from_pairs(rs, RS_PRIORITY_PAIRS)
    sol = simulate_priority_fluid(rs, order, [0, 1, 0, 1], 50.0)
    assert check_all(rs, sol).ok
    assert total_queue(sol, 50.0) > 2.0
    # fixture constant: mass after t = 50 from (0,1,0,1)
    assert total_queue(sol, 50.0) == pytest.approx(26.0, rel=1e-9)


def test_priority_fluid_event_cap(rs):
    order = priority_from_pairs(rs, RS_PRIORITY_PAIRS)
    with pytest.raises(PartialSolution) as exc:
        simulate_priority_fluid(rs, order, [0, 1, 0, 1], 1e6, max_events=5)
    assert exc.value.solution.end < 1e6


def test_queue_readouts(sq, rs):
    assert total_queue(zero_solution(sq, 3.0), 1.0) == 0.0
    assert total_queue(sq_drain(), 1.0) == 3.0
    sol = simulate_priority_fluid(rs, None, [0, 1, 0, 1], 1.0)
    assert total_queue(sol, 0.0) == 2.0
    assert station_queue(rs, sol, 1, 0.0) == 1.0
    with pytest.raises(FluidError):
        total_queue(sq_drain(), 11.0)


def test_json_round_trip(rs, tmp_path):
    sol = simulate_priority_fluid(rs, None, [1, 2, 3, 4], 5.0)
    p = tmp_path / "sol.json"
    sol.dump(p, rs)
    back = FluidSolution.load(p)
    assert np.array_equal(back.q, sol.q) and np.array_equal(back.breakpoints, sol.breakpoints)


def lipschitz_ok(net, sol):
    lam = np.array([net.lam[net.type_of[k]] for k in range(net.d)])
    mu = np.array(net.mu)
    prev_mu = np.array([mu[p] if p is not None else 0.0 for p in net.prev])
    slope = np.abs(np.diff(sol.q, axis=0)) / np.diff(sol.breakpoints)[:, None]
    return bool(np.all(slope <= lam + prev_mu + mu + 1e-9))


def mass_drop_ok(net, sol):
    c = derived_constants(net).c_big
    norms, bp = sol.norms(), sol.breakpoints
    drop = norms[:, None] - norms[None, :]  # ||Q(t1)|| - ||Q(t2)||
    gap = bp[None, :] - bp[:, None]
    mask = gap > 0
    return bool(np.all(drop[mask] <= c * gap[mask] + 1e-9))


q4 = st.lists(st.floats(0.0, 10.0, allow_nan=False), min_size=4, max_size=4)


@settings(max_examples=40, deadline=None)
@given(q0=q4, use_rs_order=st.booleans())
def test_priority_fluid_properties(rs, q0, use_rs_order):
    order = priority_from_pairs(rs, RS_PRIORITY_PAIRS) if use_rs_order else None
    sol = simulate_priority_fluid(rs, order, q0, 20.0)
    assert check_all(rs, sol).ok
    assert lipschitz_ok(rs, sol)
    assert mass_drop_ok(rs, sol)
