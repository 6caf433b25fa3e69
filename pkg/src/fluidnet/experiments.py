"""Ensemble drivers shared by the acceptance suite and the scripts.

Each driver takes a small frozen config so that a recorded run can be
repeated exactly from its JSON summary.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np

from .analysis import ClosenessReport, closeness_report, divergence_estimate
from .divergence import Witness, make_witness
from .fixtures import rs_witness, rybko_stolyar, single_queue
from .fluid import FluidSolution
from .network import NetworkSpec
from .sim import SimState, simulate
from .tracker import (
    SupervisorConfig,
    build_allocation_plan,
    plan_from_solution,
    planning_gamma,
    supervisor_run,
    theta_of,
    tracker_policy,
)


def rs_setup() -> tuple[NetworkSpec, Witness]:
    net = rybko_stolyar()
    return net, make_witness(net, rs_witness())


def even_state(net: NetworkSpec, n: int) -> list[int]:
    """``n`` jobs spread as evenly as possible, remainder on class 0."""
    per = n // net.d
    q = [per] * net.d
    q[0] += n - per * net.d
    return q


@dataclass(frozen=True)
class AttackConfig:
    n: int = 200
    max_epochs: int = 3
    cap: int = 1000
    sample_dt: float = 50.0
    horizon: float = 2e5


def attack_run(net: NetworkSpec, w: Witness, cfg: AttackConfig, seed: int) -> dict:
    sup = SupervisorConfig(max_epochs=cfg.max_epochs, practical_cap=cfg.cap)
    tr, log = supervisor_run(net, w, SimState(even_state(net, cfg.n)), sup, cfg.horizon, seed, cfg.sample_dt)
    return {
        "seed": seed,
        "first_doubled": log.first_epoch_doubled(),
        "all_doubled": all(e.doubled for e in log.epochs),
        "epochs_closed": len(log.epochs),
        "masses": [log.epochs[0].mass_start] + [e.mass_end for e in log.epochs] if log.epochs else [],
        "induction_ok": log.induction_check(),
        "divergence_estimate": divergence_estimate(tr),
        "end": float(tr.times[-1]),
        "events": tr.event_count,
    }


def attack_ensemble(seeds: Iterable[int], cfg: AttackConfig = AttackConfig()) -> tuple[list[dict], float]:
    net, w = rs_setup()
    theta = theta_of(planning_gamma(net, w))
    return [attack_run(net, w, cfg, s) for s in seeds], theta


def summarize_attack(rows: list[dict]) -> dict:
    div = np.array([r["divergence_estimate"] for r in rows])
    return {
        "seeds": len(rows),
        "first_epoch_doubling_rate": float(np.mean([r["first_doubled"] for r in rows])),
        "increasing_masses_rate": float(np.mean([bool(np.all(np.diff(r["masses"]) > 0)) for r in rows])),
        "divergence_q05": float(np.quantile(div, 0.05)),
        "divergence_median": float(np.median(div)),
        "induction_ok": all(r["induction_ok"] for r in rows),
    }


@dataclass(frozen=True)
class ClosenessConfig:
    ns: tuple[int, ...] = (100, 200, 400)
    seeds: int = 200
    cap: int = 1000
    first_seed: int = 0
    eps_diag: float = 0.1

    def to_json(self) -> dict:
        return asdict(self)


def rs_closeness(n: int, cfg: ClosenessConfig = ClosenessConfig()) -> ClosenessReport:
    """Tracker runs from an even split of ``n`` jobs, sampled exactly at the plan grid."""
    net, w = rs_setup()
    q = even_state(net, n)
    plan = build_allocation_plan(net, w, q, practical_cap=cfg.cap)
    traces = (
        simulate(net, tracker_policy(plan), SimState(q), plan.theta0, s, sample_at=plan.grid)
        for s in range(cfg.first_seed, cfg.first_seed + cfg.seeds)
    )
    return closeness_report(traces, plan, plan.fluid, net, cfg.eps_diag)


def sq_control_unit(theta: float = 2.0) -> FluidSolution:
    """Fluid SQ path from 1 draining at slope -1, then empty, on ``[0, theta]``."""
    return FluidSolution(
        np.array([0.0, 1.0, theta]),
        np.array([[1.0], [0.0], [0.0]]),
        np.array([[0.0], [1.0], [1.0 + 0.5 * (theta - 1.0)]]),
    )


def sq_closeness_control(n: int, seeds: int = 5, cap: int = 100, theta: float = 2.0) -> ClosenessReport:
    """Tracker on the SQ with deterministic primitives matching the fluid means."""
    net = single_queue(family="deterministic")
    plan = plan_from_solution(net, sq_control_unit(theta), n, theta / cap)
    traces = (
        simulate(net, tracker_policy(plan), SimState([n]), plan.theta0, s, sample_at=plan.grid) for s in range(seeds)
    )
    return closeness_report(traces, plan, plan.fluid, net)


def closeness_summary(rep: ClosenessReport) -> dict:
    out = rep.summary()
    out["bound_strict_max"] = float(rep.bound_strict.max())
    out["bound_practical_min"] = float(rep.bound_practical.min())
    out["scaled_dev_q05"] = float(np.quantile(rep.scaled_dev, 0.05))
    out["scaled_dev_q95"] = float(np.quantile(rep.scaled_dev, 0.95))
    by_seg = rep.scaled_dev_by_segment()
    out["scaled_dev_first_segment"] = by_seg[min(by_seg)]
    out["scaled_dev_last_segment"] = by_seg[max(by_seg)]
    return out

