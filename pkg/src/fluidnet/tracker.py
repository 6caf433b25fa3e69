"""Fluid-tracking scheduling and the restart supervisor.

A plan takes a divergent fluid solution started from ``q/n`` (``n = ||q||``)
on ``[0, theta]``, stretches it by ``n`` and cuts ``[0, theta n]`` into
intervals of length ``delta n``.  Within each interval the tracker gives every
class the busy time the fluid solution spends on it, in a fixed per-station
order, then serves whatever is left.  The supervisor chains plans over epochs
while the queue keeps doubling and falls back to a static priority rule
otherwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .divergence import Witness, build_divergent, empirical_rate, gamma_of_witness
from .fdp import FdpError, fdp_decompose
from .fluid import FluidSolution, scale_solution
from .network import Constants, NetworkSpec, derived_constants
from .sim import Policy, SimState, SimTrace, Simulator, StaticPriority

DEFAULT_CAP = 10**4
BUDGET_EPS = 1e-9


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class DeltaChoice:
    strict: float
    log10_strict: float
    practical: float
    applied: float
    branch: str  # "strict" or "cap"


def theta_of(gamma: float) -> float:
    return max(1.0, 3.0 / gamma)


def delta_default(constants: Constants, M: int, gamma: float, practical_cap: int = DEFAULT_CAP, theta: float | None = None) -> DeltaChoice:
    """Strict grid constant and the value actually applied.

    The strict value is used when it keeps the interval count within
    ``practical_cap``; otherwise the grid is widened to exactly
    ``practical_cap`` intervals and the branch is flagged ``"cap"``.
    """
    if M < 1 or not gamma > 0:
        raise PlanError("need M >= 1 and gamma > 0")
    c = constants.c_big
    theta = theta_of(gamma) if theta is None else theta
    log_strict = -math.log(12.0) - (M + 3) * math.log(c) + math.log(min(gamma / c, 1.0))
    strict = math.exp(log_strict)
    practical = theta / practical_cap
    if strict >= practical:
        return DeltaChoice(strict, log_strict / math.log(10), practical, strict, "strict")
    return DeltaChoice(strict, log_strict / math.log(10), practical, practical, "cap")


@dataclass
class AllocationPlan:
    n: float
    theta: float
    theta0: float
    delta: float
    grid: np.ndarray
    alloc: np.ndarray  # intervals x d, busy time per class
    order: list[list[int]]
    fluid: FluidSolution  # the stretched fluid path on [0, theta0]
    segment_index: np.ndarray  # decomposition segment containing each grid time
    M: int
    gamma: float
    delta_choice: DeltaChoice | None = None
    start_time: float = 0.0

    @property
    def intervals(self) -> int:
        return self.alloc.shape[0]

    @property
    def target_norm(self) -> float:
        return float(self.fluid.norms()[-1])

    @property
    def target_met(self) -> bool:
        return self.target_norm >= 3 * self.n - 1e-9 * max(1.0, self.n)

    def feasibility_violations(self, net: NetworkSpec, tol: float = 1e-9) -> list[str]:
        out = []
        lengths = np.diff(self.grid)
        for s, members in enumerate(net.stations):
            load = self.alloc[:, members].sum(axis=1)
            bad = np.nonzero(load > lengths + tol * np.maximum(1.0, lengths))[0]
            out += [f"station {s} over-allocated in interval {m}" for m in bad[:10]]
        if np.any(self.alloc < -tol):
            out.append("negative allocation")
        return out

    def summary(self) -> dict:
        out = {
            "n": self.n,
            "theta": self.theta,
            "theta0": self.theta0,
            "delta": self.delta,
            "intervals": self.intervals,
            "M": self.M,
            "gamma": self.gamma,
            "target_norm": self.target_norm,
            "target_met": self.target_met,
        }
        if self.delta_choice is not None:
            out["delta_strict"] = self.delta_choice.strict
            out["delta_strict_log10"] = self.delta_choice.log10_strict
            out["delta_branch"] = self.delta_choice.branch
        return out


_RATE_CACHE: dict[tuple[int, int], tuple[float, float]] = {}


def _rates(net: NetworkSpec, w: Witness) -> tuple[float, float]:
    key = (id(net), id(w))
    if key not in _RATE_CACHE:
        _RATE_CACHE[key] = (gamma_of_witness(net, w).gamma, empirical_rate(net, w))
    return _RATE_CACHE[key]


def planning_gamma(net: NetworkSpec, w: Witness, mode: str = "practical") -> float:
    """Certified gamma in strict mode; the measured ``inf ||Q||/t`` of the divergent solution otherwise."""
    strict, practical = _rates(net, w)
    if mode == "strict":
        return strict
    if mode == "practical":
        return practical
    raise PlanError(f"unknown mode {mode!r}")


def _segment_indices(net: NetworkSpec, unit: FluidSolution, grid_unit: np.ndarray) -> tuple[np.ndarray, int]:
    if net.J != 2:
        return np.zeros(grid_unit.size, dtype=int), 1
    try:
        dec = fdp_decompose(net, unit)
    except FdpError:
        return np.zeros(grid_unit.size, dtype=int), 1
    cuts = np.asarray(dec.cut_times)
    idx = np.clip(np.searchsorted(cuts, grid_unit, side="right") - 1, 0, dec.M - 1)
    return idx, dec.M


def plan_from_solution(
    net: NetworkSpec,
    unit: FluidSolution,
    n: float,
    delta: float,
    gamma: float = math.nan,
    order: list[list[int]] | None = None,
    delta_choice: DeltaChoice | None = None,
) -> AllocationPlan:
    """Tracking plan for an arbitrary fluid solution ``unit`` on ``[0, theta]`` stretched by ``n``."""
    if unit.start != 0.0:
        raise PlanError("the fluid solution must start at time 0")
    if not (n >= 1 and delta > 0):
        raise PlanError("need n >= 1 and delta > 0")
    theta = float(unit.end)
    count = math.ceil(theta / delta - 1e-9)
    grid_unit = np.minimum(np.arange(count + 1) * delta, theta)
    grid_unit[-1] = theta
    stretched = scale_solution(unit, n)
    alloc = np.diff(stretched.allocs_at(grid_unit * n), axis=0)
    alloc = np.maximum(alloc, 0.0)
    seg, M = _segment_indices(net, unit, grid_unit)
    order = order or [list(m) for m in net.stations]
    return AllocationPlan(
        n=float(n),
        theta=theta,
        theta0=theta * n,
        delta=delta,
        grid=grid_unit * n,
        alloc=alloc,
        order=order,
        fluid=stretched,
        segment_index=seg,
        M=M,
        gamma=gamma,
        delta_choice=delta_choice,
    )


def build_allocation_plan(
    net: NetworkSpec,
    witness: Witness,
    q,
    delta_override: float | None = None,
    mode: str = "practical",
    practical_cap: int = DEFAULT_CAP,
    gamma: float | None = None,
) -> AllocationPlan:
    q = np.asarray(q, dtype=float)
    n = float(q.sum())
    if n < 1:
        raise PlanError("the plan needs ||q|| >= 1")
    if mode == "strict" and net.J != 2:
        raise PlanError("strict mode needs a two-station network")
    gamma = planning_gamma(net, witness, mode) if gamma is None else gamma
    theta = theta_of(gamma)
    unit = build_divergent(net, witness, q / n, max(theta, 1.0))
    seg_probe, M = _segment_indices(net, unit, np.array([0.0]))
    choice = delta_default(derived_constants(net), M, gamma, practical_cap, theta)
    delta = delta_override if delta_override is not None else choice.applied
    if mode == "strict" and delta_override is None and choice.branch == "cap":
        # strict grid does not fit; keep the report but fall back to the cap
        delta = choice.practical
    return plan_from_solution(net, unit, n, delta, gamma, delta_choice=choice)


class TrackerPolicy(Policy):
    """Serve each class its planned busy time per interval, in plan order, then anything left."""

    name = "tracker"

    def __init__(self, plan: AllocationPlan):
        self.plan = plan
        self.m = -1
        self.t_start: list[float] = []
        self.budget: list[float] = []
        self.origin = plan.start_time

    def reset(self, sim):
        self.d = sim.d
        self.start_interval(sim, 0)

    def rebase(self, sim, origin: float) -> None:
        self.origin = origin
        self.start_interval(sim, 0)

    def start_interval(self, sim, m: int) -> None:
        self.m = m
        budget = self.plan.alloc[m].tolist() if m < self.plan.intervals else [0.0] * sim.d
        # class k is in its nominal phase while T_k < limit_k
        self.limit = [tk + bk for tk, bk in zip(sim.T, budget)]
        self.next_grid = self._grid_time(m + 1)

    def _grid_time(self, m: int) -> float:
        g = self.plan.grid
        return self.origin + float(g[m]) if m < g.size else math.inf

    def on_event(self, sim, now):
        if now >= self.next_grid:
            m = self.m + 1
            while now >= self._grid_time(m + 1):
                m += 1
            self.start_interval(sim, m)

    def remaining(self, sim, k: int) -> float:
        return self.limit[k] - sim.T[k]

    def choose(self, sim, station, now):
        q, T, limit = sim.q, sim.T, self.limit
        for k in self.plan.order[station]:
            if q[k] and limit[k] - T[k] > BUDGET_EPS:
                return k
        for k in sim.station_classes[station]:
            if q[k]:
                return k
        return None

    def next_wakeup(self, sim, now):
        wake = self.next_grid
        T, limit = sim.T, self.limit
        for k in sim.serving:
            if k is not None:
                r = limit[k] - T[k]
                if r > BUDGET_EPS and now + r < wake:
                    wake = now + r
        return wake


def tracker_policy(plan: AllocationPlan) -> TrackerPolicy:
    return TrackerPolicy(plan)


@dataclass
class SupervisorConfig:
    n0: int = 50
    growth_factor: float = 2.0
    max_epochs: int = 3
    fallback: Policy | None = None
    paper_strict_delta: bool = False
    practical_cap: int = DEFAULT_CAP
    trough_form: str = "min"

    def check(self) -> None:
        if self.n0 < 1:
            raise PlanError("n0 must be at least 1")
        if not self.growth_factor > 1:
            raise PlanError("growth_factor must exceed 1")
        if self.max_epochs < 1:
            raise PlanError("max_epochs must be at least 1")
        if self.trough_form not in ("min", "max"):
            raise PlanError("trough_form is 'min' or 'max'")

    @property
    def mode(self) -> str:
        return "strict" if self.paper_strict_delta else "practical"


@dataclass
class Epoch:
    chain: int
    index: int
    start: float
    end: float
    mass_start: int
    mass_end: int
    trough: float
    trough_floor_min: float
    trough_floor_max: float
    doubled: bool
    trough_ok: bool
    chain_start: float

    @property
    def success(self) -> bool:
        return self.doubled and self.trough_ok

    def to_json(self) -> dict:
        out = dict(self.__dict__)
        out["success"] = self.success
        return out


@dataclass
class EpochLog:
    theta: float
    gamma: float
    c_big: float
    epochs: list[Epoch] = field(default_factory=list)
    fallback_periods: list[tuple[float, float | None]] = field(default_factory=list)
    stopped: str = ""

    def to_json(self) -> dict:
        return {
            "theta": self.theta,
            "gamma": self.gamma,
            "c_big": self.c_big,
            "epochs": [e.to_json() for e in self.epochs],
            "fallback_periods": [list(p) for p in self.fallback_periods],
            "stopped": self.stopped,
        }

    def to_csv(self) -> str:
        rows = ["chain,epoch,start,end,mass_start,mass_end,doubled,trough,trough_ok"]
        for e in self.epochs:
            rows.append(
                f"{e.chain},{e.index},{e.start!r},{e.end!r},{e.mass_start},{e.mass_end},"
                f"{int(e.doubled)},{e.trough!r},{int(e.trough_ok)}"
            )
        return "\n".join(rows) + "\n"

    def first_epoch_doubled(self) -> bool:
        return bool(self.epochs) and self.epochs[0].doubled

    def induction_check(self) -> bool:
        """``||Q(theta_m)|| / theta_m >= 1/theta`` on every prefix of doubling epochs, in exact arithmetic.

        Times are measured from the start of each chain of epochs.
        """
        inv_theta = 1 / Fraction(self.theta)
        chains: dict[int, list[Epoch]] = {}
        for e in self.epochs:
            chains.setdefault(e.chain, []).append(e)
        for eps in chains.values():
            for e in eps:
                if not e.doubled:
                    break
                span = Fraction(e.end) - Fraction(e.chain_start)
                if Fraction(e.mass_end) / span < inv_theta:
                    return False
        return True


class Supervisor(Policy):
    name = "supervisor"

    def __init__(self, net: NetworkSpec, witness: Witness, cfg: SupervisorConfig):
        cfg.check()
        self.net = net
        self.witness = witness
        self.cfg = cfg
        self.gamma = planning_gamma(net, witness, cfg.mode)
        self.theta = theta_of(self.gamma)
        self.c_big = derived_constants(net).c_big
        self.fallback = cfg.fallback or StaticPriority([list(m) for m in net.stations])
        self.log = EpochLog(self.theta, self.gamma, self.c_big)
        self.tracker: TrackerPolicy | None = None
        self.plans: list[AllocationPlan] = []
        self.chain = -1

    # -- epoch bookkeeping ------------------------------------------------
    def _start_epoch(self, sim, new_chain: bool) -> None:
        if new_chain:
            self.chain += 1
            self.chain_start = sim.now
            self.index = 0
        else:
            self.index += 1
        plan = build_allocation_plan(
            self.net, self.witness, sim.q, mode=self.cfg.mode, practical_cap=self.cfg.practical_cap, gamma=self.gamma
        )
        plan.start_time = sim.now
        self.plans.append(plan)
        self.tracker = TrackerPolicy(plan)
        self.tracker.reset(sim)
        self.mass_start = sim.total()
        self.epoch_start = sim.now
        self.epoch_end = sim.now + self.theta * self.mass_start
        self.trough = float(self.mass_start)

    def _to_fallback(self, sim) -> None:
        self.tracker = None
        self.log.fallback_periods.append((sim.now, None))

    def reset(self, sim):
        self.fallback.reset(sim)
        if sim.total() >= self.cfg.n0:
            self._start_epoch(sim, True)
        else:
            self._to_fallback(sim)

    def _close_epoch(self, sim) -> None:
        mass = sim.total()
        floor_min = self.mass_start / 4 * min(self.gamma / self.c_big, 1.0)
        floor_max = self.mass_start / 4 * max(self.gamma / self.c_big, 1.0)
        floor = floor_min if self.cfg.trough_form == "min" else floor_max
        e = Epoch(
            chain=self.chain,
            index=self.index,
            start=self.epoch_start,
            end=sim.now,
            mass_start=self.mass_start,
            mass_end=mass,
            trough=self.trough,
            trough_floor_min=floor_min,
            trough_floor_max=floor_max,
            doubled=mass >= self.cfg.growth_factor * self.mass_start,
            trough_ok=self.trough >= floor,
            chain_start=self.chain_start,
        )
        self.log.epochs.append(e)
        if len(self.log.epochs) >= self.cfg.max_epochs:
            self.log.stopped = "max_epochs"
            sim.stop_requested = True
            return
        if e.success:
            self._start_epoch(sim, False)
        else:
            self._to_fallback(sim)
            self._maybe_restart(sim)

    def _maybe_restart(self, sim) -> None:
        if sim.total() >= self.cfg.n0:
            if self.log.fallback_periods and self.log.fallback_periods[-1][1] is None:
                start = self.log.fallback_periods[-1][0]
                self.log.fallback_periods[-1] = (start, sim.now)
            self._start_epoch(sim, True)

    def on_event(self, sim, now):
        if self.tracker is None:
            self._maybe_restart(sim)
            if self.tracker is None:
                return
        tot = sim.total()
        if tot < self.trough:
            self.trough = float(tot)
        if now >= self.epoch_end:
            self._close_epoch(sim)
            if self.tracker is None or sim.stop_requested:
                return
        self.tracker.on_event(sim, now)

    def choose(self, sim, station, now):
        if self.tracker is None:
            return self.fallback.choose(sim, station, now)
        return self.tracker.choose(sim, station, now)

    def next_wakeup(self, sim, now):
        if self.tracker is None:
            return math.inf
        return min(self.epoch_end, self.tracker.next_wakeup(sim, now))


def supervisor_run(
    net: NetworkSpec,
    witness: Witness,
    state0: SimState,
    cfg: SupervisorConfig,
    horizon: float,
    seed: int,
    sample_dt: float | None = None,
) -> tuple[SimTrace, EpochLog]:
    """Run the restart supervisor until ``horizon`` or until ``cfg.max_epochs`` epochs closed."""
    sup = Supervisor(net, witness, cfg)
    sim = Simulator(net, sup, state0, seed, sample_dt)
    trace = sim.run(horizon)
    if sup.tracker is not None and not sup.log.stopped:
        sup.log.stopped = "horizon"
    elif not sup.log.stopped:
        sup.log.stopped = "horizon"
    trace.meta["plans"] = [p.summary() for p in sup.plans]
    return trace, sup.log
