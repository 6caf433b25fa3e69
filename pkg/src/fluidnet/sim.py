"""Event-driven simulation of multitype networks under HOL preemptive-resume policies.

Each station has one server.  Within a class jobs are served first come
first served and only the head-of-line job can be in service; a preempted
head keeps its remaining service time.  Every primitive sequence (the
interarrival times of each type, the service times of each class) has its
own random stream derived from the master seed, so runs under different
policies share random numbers.
"""
from __future__ import annotations

import io
import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .network import DistSpec, NetworkSpec

DEFAULT_EVENT_CAP = 10**8
_BLOCK = 512
_ARRIVAL, _SERVICE = 1, 2


class SimError(RuntimeError):
    pass


class NonIdlingError(SimError):
    pass


class PolicyError(SimError):
    pass


class EventBudgetExceeded(SimError):
    pass


class Stream:
    """Block-buffered i.i.d. draws from one distribution."""

    def __init__(self, dist: DistSpec, seed: int, tag: int, index: int):
        self.dist = dist
        self.rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(tag, index)))
        self.buf: list[float] = []
        self.pos = 0

    def _refill(self):
        f, p = self.dist.family, self.dist.params
        if f == "exponential":
            arr = self.rng.exponential(1.0 / p[0], _BLOCK)
        elif f == "erlang":
            arr = self.rng.gamma(p[0], 1.0 / p[1], _BLOCK)
        elif f == "deterministic":
            arr = np.full(_BLOCK, p[0])
        elif f == "uniform-bounded":
            arr = self.rng.uniform(p[0], p[1], _BLOCK)
        else:
            raise SimError(f"unsupported distribution {f}")
        self.buf = arr.tolist()
        self.pos = 0

    def draw(self) -> float:
        if self.pos >= len(self.buf):
            self._refill()
        v = self.buf[self.pos]
        self.pos += 1
        return v


@dataclass
class SimState:
    """Queue vector with residual interarrival (``z1``) and service (``z2``) times.

    ``None`` residuals are drawn fresh; a ``z2`` entry of 0 means the head of
    that class has not started service.
    """

    q: list[int]
    z1: list[float] | None = None
    z2: list[float] | None = None

    def check(self, net: NetworkSpec) -> None:
        if len(self.q) != net.d or any(int(x) != x or x < 0 for x in self.q):
            raise SimError("q must be a nonnegative integer vector of length d")
        if self.z1 is not None:
            if len(self.z1) != net.I or any(not math.isfinite(z) or z < 0 for z in self.z1):
                raise SimError("z1 must be I finite nonnegative residuals")
        if self.z2 is not None:
            if len(self.z2) != net.d or any(not math.isfinite(z) or z < 0 for z in self.z2):
                raise SimError("z2 must be d finite nonnegative residuals")
            for k, z in enumerate(self.z2):
                if z > 0 and self.q[k] == 0:
                    raise SimError(f"class {k} has a residual service time but no jobs")

    @classmethod
    def empty(cls, net: NetworkSpec) -> "SimState":
        return cls([0] * net.d)


class Policy:
    """Scheduling rule consulted at every event.

    ``choose`` returns the class a station should serve, or ``None`` to idle.
    ``next_wakeup`` lets a policy ask for a decision point between events.
    """

    name = "policy"

    def reset(self, sim: "Simulator") -> None:
        pass

    def on_event(self, sim: "Simulator", now: float) -> None:
        pass

    def choose(self, sim: "Simulator", station: int, now: float) -> int | None:
        raise NotImplementedError

    def next_wakeup(self, sim: "Simulator", now: float) -> float:
        return math.inf


class StaticPriority(Policy):
    def __init__(self, order: Sequence[Sequence[int]]):
        self.order = [list(o) for o in order]
        self.name = "static_priority"

    def reset(self, sim):
        for s, members in enumerate(sim.net.stations):
            if sorted(self.order[s]) != sorted(members):
                raise PolicyError(f"priority order at station {s} must cover exactly its classes")

    def choose(self, sim, station, now):
        q = sim.q
        for k in self.order[station]:
            if q[k]:
                return k
        return None


class _HeadRule(Policy):
    """Pick the class whose head job minimises a timestamp key."""

    key_index = 1
    sign = 1.0

    def choose(self, sim, station, now):
        best, best_key = None, math.inf
        jobs, q = sim.jobs, sim.q
        idx, sign = self.key_index, self.sign
        for k in sim.station_classes[station]:
            if q[k]:
                key = sign * jobs[k][0][idx]
                if key < best_key:
                    best, best_key = k, key
        return best


class Fifo(_HeadRule):
    name = "fifo"


class Lifo(_HeadRule):
    name = "lifo"
    sign = -1.0


class GlobalFifo(_HeadRule):
    name = "gfifo"
    key_index = 0


def builtin_policy(kind: str, order: Sequence[Sequence[int]] | None = None) -> Policy:
    """``fifo``, ``lifo`` (HOL: latest head first), ``gfifo`` (network entry time) or ``static_priority``."""
    if kind == "fifo":
        return Fifo()
    if kind == "lifo":
        return Lifo()
    if kind == "gfifo":
        return GlobalFifo()
    if kind in ("static_priority", "priority"):
        if order is None:
            raise PolicyError("static_priority needs a per-station order")
        return StaticPriority(order)
    raise PolicyError(f"unknown policy kind {kind!r}")


@dataclass
class SimTrace:
    times: np.ndarray
    q: np.ndarray
    A: np.ndarray
    D: np.ndarray
    T: np.ndarray
    minq: np.ndarray
    seed: int
    events: list = field(default_factory=list)
    event_count: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def norms(self) -> np.ndarray:
        return self.q.sum(axis=1)

    def header(self) -> list[str]:
        d, I, J = self.q.shape[1], self.A.shape[1], self.minq.shape[1]
        return (
            ["time"]
            + [f"q_{k}" for k in range(d)]
            + [f"A_{i}" for i in range(I)]
            + [f"D_{k}" for k in range(d)]
            + [f"T_{k}" for k in range(d)]
            + [f"minq_s{s}" for s in range(J)]
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(self.header()) + "\n")
        for r in range(self.times.size):
            row = [repr(float(self.times[r]))]
            row += [str(int(x)) for x in self.q[r]]
            row += [str(int(x)) for x in self.A[r]]
            row += [str(int(x)) for x in self.D[r]]
            row += [repr(float(x)) for x in self.T[r]]
            row += [str(int(x)) for x in self.minq[r]]
            buf.write(",".join(row) + "\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_csv())

    def write_events(self, path) -> None:
        with open(path, "w") as fh:
            for ev in self.events:
                fh.write(json.dumps({"time": ev[0], "kind": ev[1], "index": ev[2]}) + "\n")

    @classmethod
    def from_csv(cls, text: str, seed: int = -1) -> "SimTrace":
        lines = text.strip().splitlines()
        head = lines[0].split(",")
        data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])
        cols = {name: i for i, name in enumerate(head)}

        def grab(prefix):
            idx = [i for name, i in cols.items() if name.startswith(prefix)]
            return data[:, idx]

        return cls(
            times=data[:, cols["time"]],
            q=grab("q_").astype(np.int64),
            A=grab("A_").astype(np.int64),
            D=grab("D_").astype(np.int64),
            T=grab("T_"),
            minq=grab("minq_s").astype(np.int64),
            seed=seed,
        )

    @classmethod
    def read_csv(cls, path, seed: int = -1) -> "SimTrace":
        with open(path) as fh:
            return cls.from_csv(fh.read(), seed)


class Simulator:
    """One simulation run; attributes are the read-only view handed to policies."""

    def __init__(
        self,
        net: NetworkSpec,
        policy: Policy,
        state0: SimState,
        seed: int,
        sample_dt: float | None = None,
        record_events: bool = False,
        event_cap: int = DEFAULT_EVENT_CAP,
        record_services: bool = False,
        max_events: int | None = None,
        sample_at: Sequence[float] | None = None,
    ):
        state0.check(net)
        self.net = net
        self.policy = policy
        self.seed = int(seed)
        self.sample_dt = sample_dt
        self.sample_at = sorted(float(x) for x in sample_at if x > 0) if sample_at is not None else None
        self.record_events = record_events
        self.event_cap = event_cap
        self.max_events = max_events if max_events is not None else math.inf
        d, I, J = net.d, net.I, net.J
        self.d, self.I, self.J = d, I, J
        self.station_classes = net.stations
        self.station_of = list(net.station_of)
        self.next_class = net.nxt
        self.first_class = net.first_class
        self.arr_streams = [Stream(t.arrival, self.seed, _ARRIVAL, i) for i, t in enumerate(net.types)]
        self.svc_streams = [
            Stream(net.types[i].stages[j].service, self.seed, _SERVICE, k) for k, (i, j) in enumerate(net.classes)
        ]
        self.now = 0.0
        # job record: [network entry time, class arrival time]
        self.jobs: list[deque] = [deque() for _ in range(d)]
        for k in range(d):
            for _ in range(int(state0.q[k])):
                self.jobs[k].append((0.0, 0.0))
        self.q = [int(x) for x in state0.q]
        self.q0 = list(self.q)
        self.qs = [sum(self.q[k] for k in members) for members in self.station_classes]
        self.n_total = sum(self.q)
        self.rem = [-1.0] * d
        self.service_of_head = [math.nan] * d
        if state0.z2 is not None:
            for k, z in enumerate(state0.z2):
                if z > 0:
                    self.rem[k] = float(z)
        self.A = [0] * I
        self.D = [0] * d
        self.T = [0.0] * d
        self.next_arrival = [
            (float(state0.z1[i]) if state0.z1 is not None else self.arr_streams[i].draw()) for i in range(I)
        ]
        self.serving: list[int | None] = [None] * J
        self.since = [0.0] * J
        self.events: list = []
        self.event_count = 0
        self.record_services = record_services
        self.services: list[list[float]] = [[] for _ in range(d)]
        self.completion_log: list[tuple[float, int, int, float]] = []
        self.stop_requested = False
        # sampling
        self._rows: list = []
        self._minq = list(self.qs)

    # -- helpers ---------------------------------------------------------
    def _station_q(self, s: int) -> int:
        return self.qs[s]

    def total(self) -> int:
        return self.n_total

    def _sample(self, t: float) -> None:
        self._rows.append((t, list(self.q), list(self.A), list(self.D), list(self.T), list(self._minq)))
        self._minq = list(self.qs)

    def _advance(self, t: float) -> None:
        for s in range(self.J):
            k = self.serving[s]
            if k is not None:
                el = t - self.since[s]
                self.rem[k] -= el
                self.T[k] += el
                self.since[s] = t
        self.now = t

    def _decide(self) -> None:
        pol, now = self.policy, self.now
        pol.on_event(self, now)
        choose, serving, station_of, q = pol.choose, self.serving, self.station_of, self.q
        for s in range(self.J):
            k = choose(self, s, now)
            if k is None:
                if self.qs[s]:
                    raise NonIdlingError(f"non-idling violation: station {s} idles with work at t={now}")
            elif station_of[k] != s or not q[k]:
                raise PolicyError(f"policy chose invalid class {k} at station {s} (t={now})")
            cur = serving[s]
            if k != cur:
                if cur is not None and self.record_events and self.q[cur]:
                    self.events.append((now, "preempt", cur))
                if k is not None and self.rem[k] < 0:
                    s_k = self.svc_streams[k].draw()
                    self.rem[k] = s_k
                    self.service_of_head[k] = s_k
                    if self.record_services:
                        self.services[k].append(s_k)
                self.serving[s] = k
                self.since[s] = now

    # -- main loop -------------------------------------------------------
    def run(self, horizon: float) -> SimTrace:
        if not horizon > 0:
            raise SimError("horizon must be positive")
        self.policy.reset(self)
        self._sample(0.0)
        self._decide()
        if self.stop_requested:
            horizon = 0.0
        I, J = self.I, self.J
        at = self.sample_at
        if at is not None:
            at_pos = 0
            next_sample = at[0] if at else math.inf
        else:
            next_sample = self.sample_dt if self.sample_dt else math.inf
        every_event = not self.sample_dt and at is None
        record = self.record_events
        serving, since, rem = self.serving, self.since, self.rem
        next_arrival, q, qs, jobs = self.next_arrival, self.q, self.qs, self.jobs
        station_of, next_class, first_class = self.station_of, self.next_class, self.first_class
        A, D, Tc = self.A, self.D, self.T
        wakeup = self.policy.next_wakeup
        Jr, Ir = range(J), range(I)
        inf = math.inf
        while True:
            t = min(next_arrival)
            comp = [inf] * J
            for s in Jr:
                k = serving[s]
                if k is not None:
                    c = since[s] + rem[k]
                    comp[s] = c
                    if c < t:
                        t = c
            wake = wakeup(self, self.now)
            if wake < t:
                t = wake
            while next_sample <= t and next_sample < horizon:
                self._advance(next_sample)
                self._sample(next_sample)
                if at is None:
                    next_sample += self.sample_dt
                else:
                    at_pos += 1
                    next_sample = at[at_pos] if at_pos < len(at) else math.inf
            if t >= horizon:
                self._advance(horizon)
                self._sample(horizon)
                break
            for s in Jr:
                k = serving[s]
                if k is not None:
                    el = t - since[s]
                    rem[k] -= el
                    Tc[k] += el
                    since[s] = t
            self.now = t
            self.event_count += 1
            if self.event_count > self.event_cap:
                raise EventBudgetExceeded(f"event budget {self.event_cap} exceeded at t={t}")
            for i in Ir:
                if next_arrival[i] == t:
                    k = first_class[i]
                    jobs[k].append((t, t))
                    q[k] += 1
                    qs[station_of[k]] += 1
                    self.n_total += 1
                    A[i] += 1
                    next_arrival[i] = t + self.arr_streams[i].draw()
                    if record:
                        self.events.append((t, "arrival", i))
            done = [serving[s] for s in Jr if comp[s] == t]
            if len(done) > 1:
                done.sort()
            for k in done:
                s = station_of[k]
                job = jobs[k].popleft()
                q[k] -= 1
                qs[s] -= 1
                D[k] += 1
                if self.record_services:
                    self.completion_log.append((t, k, D[k], self.T[k]))
                rem[k] = -1.0
                serving[s] = None
                nk = next_class[k]
                if nk is not None:
                    jobs[nk].append((job[0], t))
                    q[nk] += 1
                    qs[station_of[nk]] += 1
                else:
                    self.n_total -= 1
                if record:
                    self.events.append((t, "completion", k))
            self._decide()
            if self.stop_requested or self.event_count >= self.max_events:
                self._sample(t)
                break
            minq = self._minq
            for s in Jr:
                if qs[s] < minq[s]:
                    minq[s] = qs[s]
            if every_event:
                self._sample(t)
        rows = self._rows
        return SimTrace(
            times=np.array([r[0] for r in rows]),
            q=np.array([r[1] for r in rows], dtype=np.int64),
            A=np.array([r[2] for r in rows], dtype=np.int64),
            D=np.array([r[3] for r in rows], dtype=np.int64),
            T=np.array([r[4] for r in rows], dtype=float),
            minq=np.array([r[5] for r in rows], dtype=np.int64),
            seed=self.seed,
            events=self.events,
            event_count=self.event_count,
            meta={"policy": self.policy.name},
        )


def simulate(
    net: NetworkSpec,
    policy: Policy,
    state0: SimState | None,
    horizon: float,
    seed: int,
    sample_dt: float | None = None,
    record_events: bool = False,
    event_cap: int = DEFAULT_EVENT_CAP,
    max_events: int | None = None,
    sample_at: Sequence[float] | None = None,
) -> SimTrace:
    """Run one simulation; ``sample_dt=None`` records a sample after every event.

    ``sample_at`` replaces the regular grid by explicit sample times (the
    horizon is always sampled).  ``max_events`` ends the run early, with a
    final sample, instead of raising.
    """
    state0 = state0 or SimState.empty(net)
    sim = Simulator(
        net, policy, state0, seed, sample_dt, record_events, event_cap, max_events=max_events, sample_at=sample_at
    )
    return sim.run(horizon)


@dataclass
class TraceReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_trace(net: NetworkSpec, trace: SimTrace, tol: float = 1e-9) -> TraceReport:
    """Replay flow balance, station feasibility and the non-idling clause over every sample window."""
    rep = TraceReport()
    v = rep.violations
    q, A, D, T = trace.q, trace.A, trace.D, trace.T
    if q.shape[1] != net.d or A.shape[1] != net.I:
        v.append("trace dimensions do not match the network")
        return rep
    q0 = q[0]
    expected = np.repeat(q0[None, :], q.shape[0], axis=0).astype(np.int64)
    for k, p in enumerate(net.prev):
        if p is None:
            expected[:, k] += A[:, net.type_of[k]] - D[:, k]
        else:
            expected[:, k] += D[:, p] - D[:, k]
    bad = np.argwhere(expected != q)
    for r, k in bad[:20]:
        v.append(f"conservation violation at sample {r} class {k}: q={q[r, k]} expected {expected[r, k]}")
    for name, arr in (("A", A), ("D", D), ("T", T)):
        if np.any(np.diff(arr, axis=0) < -tol):
            v.append(f"cumulative {name} decreases")
    if np.any(q < 0):
        v.append("negative queue")
    dt = np.diff(trace.times)
    for s, members in enumerate(net.stations):
        if not members:
            continue
        dTs = np.diff(T[:, members].sum(axis=1))
        slack = tol * (1.0 + trace.times[1:])
        over = np.nonzero(dTs > dt + slack)[0]
        for r in over[:20]:
            v.append(f"feasibility violation at station {s}, window {r}: busy {dTs[r]} > {dt[r]}")
        busy = trace.minq[1:, s] > 0
        short = np.nonzero(busy & (dTs < dt - slack))[0]
        for r in short[:20]:
            v.append(f"non-idling violation at station {s}, window {r}: busy {dTs[r]} < {dt[r]}")
    return rep
