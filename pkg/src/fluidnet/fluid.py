"""Piecewise-linear fluid solutions: representation, checks and transforms.

A :class:`FluidSolution` stores queue levels ``q`` and cumulative allocations
``t`` at strictly increasing breakpoints; both are linearly interpolated in
between.  Arrivals are implicit (``lambda_i * t``) and so are departures
(``mu_ij * T_ij``), so every check below is a finite computation over the
breakpoints.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .network import NetworkSpec

DEFAULT_TOL = 1e-9
MERGE_GAP = 1e-12
_EPS = np.finfo(float).eps


class FluidError(ValueError):
    pass


@dataclass(frozen=True)
class FluidSolution:
    breakpoints: np.ndarray
    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float).reshape(-1)
        q = np.asarray(self.q, dtype=float)
        t = np.asarray(self.t, dtype=float)
        if q.ndim != 2 or t.shape != q.shape or q.shape[0] != bp.size:
            raise FluidError(
                f"shape mismatch: breakpoints {bp.shape}, q {q.shape}, t {t.shape}"
            )
        if bp.size < 2:
            raise FluidError("a fluid solution needs at least two breakpoints")
        if not np.all(np.diff(bp) > 0):
            raise FluidError("breakpoints must be strictly increasing")
        if bp[0] < 0:
            raise FluidError("breakpoints must start at a nonnegative time")
        for arr in (bp, q, t):
            arr.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", t)

    @property
    def start(self) -> float:
        return float(self.breakpoints[0])

    @property
    def end(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def d(self) -> int:
        return self.q.shape[1]

    @property
    def segments(self) -> int:
        return self.breakpoints.size - 1

    def _check_time(self, t: float) -> None:
        if not (self.start - 1e-12 <= t <= self.end + 1e-12):
            raise FluidError(f"time {t} outside [{self.start}, {self.end}]")

    def queue_at(self, t: float) -> np.ndarray:
        self._check_time(t)
        return np.array([np.interp(t, self.breakpoints, self.q[:, k]) for k in range(self.d)])

    def alloc_at(self, t: float) -> np.ndarray:
        self._check_time(t)
        return np.array([np.interp(t, self.breakpoints, self.t[:, k]) for k in range(self.d)])

    def queues_at(self, times: Sequence[float]) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        return np.stack([np.interp(times, self.breakpoints, self.q[:, k]) for k in range(self.d)], axis=1)

    def allocs_at(self, times: Sequence[float]) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        return np.stack([np.interp(times, self.breakpoints, self.t[:, k]) for k in range(self.d)], axis=1)

    def norms(self) -> np.ndarray:
        """L1 norm of the queue vector at each breakpoint."""
        return np.abs(self.q).sum(axis=1)

    # -- serialization -------------------------------------------------
    def to_json(self, net: NetworkSpec | None = None) -> dict:
        out = {
            "breakpoints": self.breakpoints.tolist(),
            "q": self.q.tolist(),
            "t": self.t.tolist(),
        }
        if net is not None:
            out["classes"] = [list(c) for c in net.classes]
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "FluidSolution":
        extra = set(obj) - {"breakpoints", "q", "t", "classes"}
        if extra:
            raise FluidError(f"unknown key(s) in fluid solution: {sorted(extra)}")
        try:
            return cls(np.array(obj["breakpoints"]), np.array(obj["q"]), np.array(obj["t"]))
        except KeyError as exc:
            raise FluidError(f"missing key {exc} in fluid solution") from exc

    def dump(self, path, net: NetworkSpec | None = None) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(net), fh)

    @classmethod
    def load(cls, path) -> "FluidSolution":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def zero_solution(net: NetworkSpec, horizon: float) -> FluidSolution:
    """The empty-network solution: ``Q = 0`` and ``T_ij(t) = (lambda_i/mu_ij) t``."""
    slope = np.array([net.lam[net.type_of[k]] / net.mu[k] for k in range(net.d)])
    return FluidSolution(np.array([0.0, horizon]), np.zeros((2, net.d)), np.outer([0.0, horizon], slope))


# ----------------------------------------------------------------------
# checks


@dataclass
class Violation:
    kind: str
    segment: int
    where: int
    magnitude: float


@dataclass
class FluidReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def max_violation(self) -> float:
        return max((v.magnitude for v in self.violations), default=0.0)

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}

    def extend(self, other: "FluidReport") -> "FluidReport":
        self.violations.extend(other.violations)
        return self

    def summary(self, limit: int = 10) -> str:
        if self.ok:
            return "ok"
        lines = [f"{len(self.violations)} violation(s), max {self.max_violation:.3g}"]
        for v in self.violations[:limit]:
            lines.append(f"  {v.kind} segment={v.segment} at={v.where} magnitude={v.magnitude:.3g}")
        return "\n".join(lines)


def _arrival_vector(net: NetworkSpec) -> np.ndarray:
    arr = np.zeros(net.d)
    for i, k in enumerate(net.first_class):
        arr[k] = net.lam[i]
    return arr


def flow_matrix(net: NetworkSpec) -> np.ndarray:
    """Matrix ``R`` with ``dQ = arrivals dt - R dT`` (departures minus routing)."""
    R = np.zeros((net.d, net.d))
    mu = net.mu
    for k, p in enumerate(net.prev):
        R[k, k] = mu[k]
        if p is not None:
            R[k, p] = -mu[p]
    return R


def conservation_residual(net: NetworkSpec, sol: FluidSolution) -> np.ndarray:
    """Residual of the flow balance at every breakpoint, relative to the first."""
    dt = sol.breakpoints - sol.breakpoints[0]
    dT = sol.t - sol.t[0]
    expected = sol.q[0] + np.outer(dt, _arrival_vector(net)) - dT @ flow_matrix(net).T
    return sol.q - expected


def validate_fluid_solution(net: NetworkSpec, sol: FluidSolution, tol: float = DEFAULT_TOL) -> FluidReport:
    """Check nonnegativity, monotone allocations, station feasibility and flow balance."""
    if sol.d != net.d:
        raise FluidError(f"solution has {sol.d} classes, network has {net.d}")
    rep = FluidReport()
    v = rep.violations
    for r, k in zip(*np.nonzero(sol.q < -tol)):
        v.append(Violation("negative queue", int(r), int(k), float(-sol.q[r, k])))
    dT = np.diff(sol.t, axis=0)
    for r, k in zip(*np.nonzero(dT < -tol)):
        v.append(Violation("allocation decreasing", int(r), int(k), float(-dT[r, k])))
    if sol.start == 0.0:
        for k in np.nonzero(np.abs(sol.t[0]) > tol)[0]:
            v.append(Violation("allocation nonzero at time 0", 0, int(k), float(abs(sol.t[0, k]))))
    du = np.diff(sol.breakpoints)
    for s, members in enumerate(net.stations):
        if not members:
            continue
        load = dT[:, members].sum(axis=1)
        excess = load - du
        for r in np.nonzero(excess > tol)[0]:
            v.append(Violation("station feasibility", int(r), s, float(excess[r])))
    res = conservation_residual(net, sol)
    for r, k in zip(*np.nonzero(np.abs(res) > tol)):
        v.append(Violation("flow conservation", int(r), int(k), float(abs(res[r, k]))))
    return rep


def station_queues(net: NetworkSpec, sol: FluidSolution) -> np.ndarray:
    """Per-station aggregate queue at each breakpoint, shape (K+1, J)."""
    return np.stack([sol.q[:, m].sum(axis=1) if m else np.zeros(sol.breakpoints.size) for m in net.stations], axis=1)


def station_allocs(net: NetworkSpec, sol: FluidSolution) -> np.ndarray:
    return np.stack([sol.t[:, m].sum(axis=1) if m else np.zeros(sol.breakpoints.size) for m in net.stations], axis=1)


def check_non_idling(net: NetworkSpec, sol: FluidSolution, tol: float = DEFAULT_TOL) -> FluidReport:
    """Flag segments where a station idles while its queue is above ``tol``.

    A segment idles when the busy-time slope is below ``1 - tol``.  The idle
    amount is compared with an allowance for the rounding error of the
    differenced cumulative values, which matters on very short segments.
    """
    if sol.d != net.d:
        raise FluidError(f"solution has {sol.d} classes, network has {net.d}")
    rep = FluidReport()
    Qs = station_queues(net, sol)
    Ts = station_allocs(net, sol)
    du = np.diff(sol.breakpoints)
    idle = du[:, None] - np.diff(Ts, axis=0)
    for s in range(net.J):
        if not net.stations[s]:
            continue
        round_err = 16 * _EPS * (np.abs(Ts[1:, s]) + np.abs(sol.breakpoints[1:]) + len(net.stations[s]))
        idles = idle[:, s] > tol * du + round_err
        busy_q = (Qs[:-1, s] > tol) | (Qs[1:, s] > tol)
        for r in np.nonzero(idles & busy_q)[0]:
            mag = float(max(Qs[r, s], Qs[r + 1, s]) * idle[r, s])
            rep.violations.append(Violation("idling with positive queue", int(r), s, mag))
    return rep


def check_all(net: NetworkSpec, sol: FluidSolution, tol: float = DEFAULT_TOL) -> FluidReport:
    return validate_fluid_solution(net, sol, tol).extend(check_non_idling(net, sol, tol))


def total_queue(sol: FluidSolution, t: float) -> float:
    return float(np.abs(sol.queue_at(t)).sum())


def station_queue(net: NetworkSpec, sol: FluidSolution, station: int, t: float) -> float:
    return float(sol.queue_at(t)[net.stations[station]].sum())


# ----------------------------------------------------------------------
# transforms


def merge_close(bp: np.ndarray, q: np.ndarray, t: np.ndarray, gap: float = MERGE_GAP):
    """Drop breakpoints closer than ``gap`` to the previously kept one.

    The last breakpoint is always kept, replacing a kept predecessor that is
    too close to it.
    """
    keep = [0]
    for r in range(1, bp.size):
        if bp[r] - bp[keep[-1]] >= gap:
            keep.append(r)
        elif r == bp.size - 1:
            if len(keep) > 1:
                keep[-1] = r
            else:
                keep.append(r)
    idx = np.array(keep)
    return bp[idx], q[idx], t[idx]


def make_solution(bp, q, t, gap: float = MERGE_GAP) -> FluidSolution:
    bp, q, t = merge_close(np.asarray(bp, float), np.asarray(q, float), np.asarray(t, float), gap)
    return FluidSolution(bp, q, t)


def scale_solution(sol: FluidSolution, beta: float) -> FluidSolution:
    """``Q'(t) = beta Q(t/beta)``, ``T'(t) = beta T(t/beta)``."""
    if not beta > 0:
        raise FluidError("beta must be positive")
    return FluidSolution(sol.breakpoints * beta, sol.q * beta, sol.t * beta)


def restrict(sol: FluidSolution, t1: float, t2: float) -> FluidSolution:
    """The solution on ``[t1, t2]`` (absolute time kept)."""
    if not t1 < t2:
        raise FluidError("need t1 < t2")
    sol._check_time(t1)
    sol._check_time(t2)
    t1, t2 = max(t1, sol.start), min(t2, sol.end)
    bp = sol.breakpoints
    inner = (bp > t1) & (bp < t2)
    times = np.concatenate([[t1], bp[inner], [t2]])
    q = np.concatenate([[sol.queue_at(t1)], sol.q[inner], [sol.queue_at(t2)]])
    t = np.concatenate([[sol.alloc_at(t1)], sol.t[inner], [sol.alloc_at(t2)]])
    # reuse stored rows at exact breakpoint hits
    for pos, tt in ((0, t1), (-1, t2)):
        hit = np.nonzero(bp == tt)[0]
        if hit.size:
            q[pos], t[pos] = sol.q[hit[0]], sol.t[hit[0]]
    return make_solution(times, q, t)


def shift_to_origin(sol: FluidSolution) -> FluidSolution:
    """Translate time so the solution starts at 0 and allocations start at 0."""
    return FluidSolution(sol.breakpoints - sol.start, sol.q, sol.t - sol.t[0])


def concat(first: FluidSolution, second: FluidSolution) -> FluidSolution:
    """Join two solutions that meet at ``first.end == second.start``."""
    if not math.isclose(first.end, second.start, rel_tol=0, abs_tol=1e-12):
        raise FluidError("solutions do not meet")
    bp = np.concatenate([first.breakpoints, second.breakpoints[1:]])
    q = np.concatenate([first.q, second.q[1:]])
    t = np.concatenate([first.t, second.t[1:]])
    return make_solution(bp, q, t)


def linearize_segment(sol: FluidSolution, t1: float, t2: float) -> FluidSolution:
    """Replace the solution on ``[t1, t2]`` by the straight line between its endpoint values."""
    if not t1 < t2:
        raise FluidError("need t1 < t2")
    if t1 < sol.start - 1e-12 or t2 > sol.end + 1e-12:
        raise FluidError(f"[{t1}, {t2}] outside the solution domain")
    bp = sol.breakpoints
    parts_bp, parts_q, parts_t = [], [], []

    def row(tt):
        hit = np.nonzero(bp == tt)[0]
        if hit.size:
            return sol.q[hit[0]], sol.t[hit[0]]
        return sol.queue_at(tt), sol.alloc_at(tt)

    before = bp < t1
    after = bp > t2
    q1, a1 = row(t1)
    q2, a2 = row(t2)
    parts_bp = np.concatenate([bp[before], [t1, t2], bp[after]])
    parts_q = np.concatenate([sol.q[before], [q1, q2], sol.q[after]])
    parts_t = np.concatenate([sol.t[before], [a1, a2], sol.t[after]])
    return make_solution(parts_bp, parts_q, parts_t)


# ----------------------------------------------------------------------
# priority integrator


def _priority_alloc(
    zero: np.ndarray,
    arr: np.ndarray,
    cap: np.ndarray,
    mu: np.ndarray,
    prev: list,
    order: list[list[int]],
    max_iter: int = 60,
) -> np.ndarray:
    """Instantaneous time fractions under static priority.

    Positive buffers at a station take all capacity left by higher-priority
    classes; an empty buffer is served no faster than its inflow.  The
    coupled inflows are resolved by Gauss-Seidel sweeps over the stations in
    index order, with a weighted LP as fallback when the sweeps cycle.  The
    sweep order settles ties between symmetric solutions: the lower-indexed
    station moves first.
    """
    d = mu.size
    y = np.zeros(d)
    for _ in range(max_iter):
        change = 0.0
        for s, cls in enumerate(order):
            left = cap[s]
            for k in cls:
                if left <= 0:
                    take = 0.0
                elif zero[k]:
                    p = prev[k]
                    inflow = arr[k] + (mu[p] * y[p] if p is not None else 0.0)
                    take = min(left, inflow / mu[k])
                else:
                    take = left
                change = max(change, abs(take - y[k]))
                y[k] = take
                left -= take
        if change <= 1e-15:
            return y
    return _priority_alloc_lp(zero, arr, cap, mu, prev, order)


def _priority_alloc_lp(zero, arr, cap, mu, prev, order) -> np.ndarray:
    d = mu.size
    rank = np.zeros(d)
    for cls in order:
        for r, k in enumerate(cls):
            rank[k] = r
    w = 10.0 ** (-3 * rank)
    A_ub, b_ub = [], []
    for s, cls in enumerate(order):
        row = np.zeros(d)
        row[cls] = 1.0
        A_ub.append(row)
        b_ub.append(cap[s])
    for k in range(d):
        if zero[k]:
            row = np.zeros(d)
            row[k] = mu[k]
            if prev[k] is not None:
                row[prev[k]] = -mu[prev[k]]
            A_ub.append(row)
            b_ub.append(arr[k])
    res = linprog(-w, A_ub=np.array(A_ub), b_ub=np.array(b_ub), bounds=[(0, None)] * d, method="highs")
    if res.status != 0:
        raise FluidError(f"priority allocation LP failed: {res.message}")
    return res.x


@dataclass
class _Run:
    times: list
    x: list
    fill: list
    truncated: bool = False


def _integrate(
    net: NetworkSpec,
    x0: np.ndarray,
    t0: float,
    seg_ends: np.ndarray,
    caps: np.ndarray,
    arr: np.ndarray,
    order: list[list[int]],
    max_events: int = 200_000,
) -> _Run:
    """Integrate priority dynamics of buffer content ``x`` over piecewise-constant capacities.

    ``seg_ends[r]`` closes the r-th capacity segment, whose per-station
    capacity is ``caps[r]``.  Returns the event times, ``x`` at each event and
    the cumulative allocation granted by the integrator.
    """
    mu = np.array(net.mu)
    prev = net.prev
    R = flow_matrix(net)
    x0 = np.asarray(x0, dtype=float)
    F = np.zeros(net.d)
    run = _Run([t0], [x0.copy()], [F.copy()])
    t = t0
    x = x0.copy()
    seg = 0
    events = 0
    scale = 1.0 + float(np.abs(x0).sum()) + float(arr.sum() * (seg_ends[-1] - t0))
    snap = 1e-13 * scale
    while seg < len(seg_ends):
        end = seg_ends[seg]
        if end - t <= 0:
            seg += 1
            continue
        zero = x <= snap
        y = _priority_alloc(zero, arr, np.maximum(caps[seg], 0.0), mu, prev, order)
        dx = arr - R @ y
        dt = end - t
        hit = -1
        for k in range(net.d):
            if not zero[k] and dx[k] < 0:
                h = x[k] / -dx[k]
                if h < dt:
                    dt, hit = h, k
        t_new = end if hit < 0 else t + dt
        F = F + y * (t_new - t)
        x = x0 + arr * (t_new - t0) - R @ F
        if hit >= 0:
            x[hit] = 0.0
        x[x <= snap] = 0.0
        t = t_new
        run.times.append(t)
        run.x.append(x.copy())
        run.fill.append(F.copy())
        if hit < 0:
            seg += 1
        events += 1
        if events > max_events:
            run.truncated = True
            break
    return run


def default_priority(net: NetworkSpec) -> list[list[int]]:
    """Per-station class order by class index."""
    return [list(m) for m in net.stations]


def priority_from_pairs(net: NetworkSpec, pairs: Sequence[Sequence[tuple[int, int]]]) -> list[list[int]]:
    """Translate per-station orders given as (type, stage) pairs into class indices."""
    order = [[net.class_index(i, j) for i, j in st] for st in pairs]
    for s, members in enumerate(net.stations):
        if sorted(order[s]) != sorted(members):
            raise FluidError(f"priority at station {s} must list exactly its classes")
    return order


@dataclass
class PartialSolution(Exception):
    solution: FluidSolution

    def __str__(self):
        return f"event cap exceeded; partial solution up to t={self.solution.end}"


def simulate_priority_fluid(
    net: NetworkSpec,
    priority: Sequence[Sequence[int]] | None,
    q0: Sequence[float],
    horizon: float,
    max_events: int = 200_000,
) -> FluidSolution:
    """Fluid trajectory under a static buffer priority rule.

    Raises :class:`PartialSolution` (carrying the partial trajectory) when the
    event budget runs out.
    """
    q0 = np.asarray(q0, dtype=float)
    if q0.shape != (net.d,) or np.any(q0 < 0):
        raise FluidError("q0 must be a nonnegative vector of length d")
    if not horizon > 0:
        raise FluidError("horizon must be positive")
    order = [list(p) for p in priority] if priority is not None else default_priority(net)
    for s, members in enumerate(net.stations):
        if sorted(order[s]) != sorted(members):
            raise FluidError(f"priority at station {s} must list exactly its classes")
    caps = np.ones((1, net.J))
    run = _integrate(net, q0, 0.0, np.array([horizon]), caps, _arrival_vector(net), order, max_events)
    sol = make_solution(np.array(run.times), np.array(run.x), np.array(run.fill))
    if run.truncated:
        raise PartialSolution(sol)
    return sol
