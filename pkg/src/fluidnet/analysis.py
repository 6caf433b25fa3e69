"""Estimators over simulation ensembles: throughput, linear growth rate, plan closeness."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .fluid import FluidSolution
from .network import NetworkSpec, derived_constants
from .sim import SimTrace
from .tracker import AllocationPlan


class AnalysisError(ValueError):
    pass


def divergence_estimate(trace: SimTrace, window_fraction: float = 0.5) -> float:
    """``min ||Q(t)||/t`` over sample times in the trailing ``window_fraction`` of the run."""
    if not 0 < window_fraction < 1:
        raise AnalysisError("window_fraction must lie in (0, 1)")
    return _trailing_min_ratio(trace.times, trace.norms(), window_fraction)


def _trailing_min_ratio(times: np.ndarray, norms: np.ndarray, window_fraction: float) -> float:
    end = float(times[-1])
    if not end > 0:
        raise AnalysisError("the trace has zero length")
    sel = (times >= (1 - window_fraction) * end) & (times > 0)
    return float((norms[sel] / times[sel]).min())


@dataclass
class StabilityReport:
    lam: list[float]
    throughput: np.ndarray  # seeds x types
    growth: np.ndarray  # seeds x classes, Q(T)/T
    divergence: np.ndarray  # per seed
    tol: list[float]
    throughput_ok: np.ndarray  # per seed
    sublinear: np.ndarray  # per seed: every Q(T)/T below tol

    @property
    def seeds(self) -> int:
        return self.throughput.shape[0]

    @property
    def stable_fraction(self) -> float:
        return float(self.throughput_ok.mean())

    @property
    def verdict(self) -> str:
        return "rate-stable evidence" if self.throughput_ok.all() else "not rate-stable"

    def quantile(self, q: float) -> float:
        return float(np.quantile(self.divergence, q))

    def to_json(self) -> dict:
        return {
            "lambda": self.lam,
            "tol": self.tol,
            "verdict": self.verdict,
            "stable_fraction": self.stable_fraction,
            "throughput_mean": self.throughput.mean(axis=0).tolist(),
            "growth_mean": self.growth.mean(axis=0).tolist(),
            "sublinear_fraction": float(self.sublinear.mean()),
            "divergence_q05": self.quantile(0.05),
            "divergence_q50": self.quantile(0.5),
        }


def rate_stability_estimate(
    traces: Sequence[SimTrace], net: NetworkSpec, tol: float | None = None, window_fraction: float = 0.5
) -> StabilityReport:
    """Throughput ``D_last(T)/T`` against ``lambda`` per type; default tolerance ``3/sqrt(lambda T)``."""
    if not traces:
        raise AnalysisError("empty ensemble")
    horizon = traces[0].horizon
    if not horizon > 0:
        raise AnalysisError("zero horizon")
    if any(not math.isclose(tr.horizon, horizon) for tr in traces):
        raise AnalysisError("traces must share the horizon")
    lam = net.lam
    tols = [tol if tol is not None else 3 / math.sqrt(l * horizon) for l in lam]
    last = net.last_class
    thr = np.array([[tr.D[-1, k] / horizon for k in last] for tr in traces], dtype=float)
    growth = np.array([tr.q[-1] / horizon for tr in traces], dtype=float)
    div = np.array([divergence_estimate(tr, window_fraction) for tr in traces])
    ok = np.all(np.abs(thr - np.array(lam)) < np.array(tols), axis=1)
    sub = np.all(growth < min(tols), axis=1)
    return StabilityReport(list(lam), thr, growth, div, tols, ok, sub)


@dataclass
class ClosenessReport:
    n: float
    grid: np.ndarray
    segment_index: np.ndarray
    bound_strict: np.ndarray
    bound_practical: np.ndarray
    max_dev: np.ndarray  # seeds x grid points, max_k |Q_k - Qbar_k|
    eps_diag: float
    per_time_strict: np.ndarray = field(init=False)
    per_time_practical: np.ndarray = field(init=False)

    def __post_init__(self):
        self.per_time_strict = (self.max_dev <= self.bound_strict).mean(axis=0)
        self.per_time_practical = (self.max_dev <= self.bound_practical).mean(axis=0)

    @property
    def fraction_strict(self) -> float:
        return float(np.all(self.max_dev <= self.bound_strict, axis=1).mean())

    @property
    def fraction_practical(self) -> float:
        return float(np.all(self.max_dev <= self.bound_practical, axis=1).mean())

    @property
    def fraction_eps(self) -> float:
        """Seeds staying within ``eps_diag * n`` at every grid time (scale-free diagnostic)."""
        return float(np.all(self.max_dev <= self.eps_diag * self.n, axis=1).mean())

    @property
    def scaled_dev(self) -> np.ndarray:
        return self.max_dev.max(axis=1) / self.n

    def scaled_dev_by_segment(self) -> dict[int, float]:
        """Ensemble median of ``max |Q - Qbar| / n`` within each decomposition segment."""
        med = np.median(self.max_dev, axis=0) / self.n
        return {int(r): float(med[self.segment_index == r].max()) for r in np.unique(self.segment_index)}

    def rows(self) -> list[dict]:
        return [
            {
                "t": float(t),
                "segment": int(r),
                "bound_strict": float(bs),
                "bound_practical": float(bp),
                "frac_strict": float(fs),
                "frac_practical": float(fp),
            }
            for t, r, bs, bp, fs, fp in zip(
                self.grid,
                self.segment_index,
                self.bound_strict,
                self.bound_practical,
                self.per_time_strict,
                self.per_time_practical,
            )
        ]

    def summary(self) -> dict:
        return {
            "n": self.n,
            "seeds": int(self.max_dev.shape[0]),
            "fraction_strict": self.fraction_strict,
            "fraction_practical": self.fraction_practical,
            "eps_diag": self.eps_diag,
            "fraction_eps": self.fraction_eps,
            "scaled_dev_median": float(np.median(self.scaled_dev)),
        }


def _bounds(log_delta: float, c: float, seg: np.ndarray, n: float) -> np.ndarray:
    """``delta c^(r+3) n`` evaluated in log space (the strict delta can underflow)."""
    with np.errstate(over="ignore"):
        return np.exp(log_delta + (seg + 3.0) * math.log(c) + math.log(n))


def closeness_report(
    traces: Iterable[SimTrace],
    plan: AllocationPlan,
    fluid: FluidSolution,
    net: NetworkSpec,
    eps_diag: float = 0.1,
) -> ClosenessReport:
    """Deviation of sampled queues from the planned fluid path at every grid time.

    Trace time is measured from the plan start; the state at ``t_m`` is the
    latest sample at or before ``t_m``.  ``traces`` may be a generator, so
    large ensembles never sit in memory at once.
    """
    if not math.isclose(fluid.end, plan.theta0, rel_tol=1e-9) or not np.allclose(fluid.q[0], plan.fluid.q[0]):
        raise AnalysisError("plan and fluid solution do not match")
    steps = np.diff(plan.grid)
    if steps.size > 1 and not np.allclose(steps[:-1], plan.delta * plan.n, rtol=1e-9):
        raise AnalysisError("plan grid does not match its delta")
    c = derived_constants(net).c_big
    grid = plan.grid
    Qbar = fluid.queues_at(grid)
    rows = []
    for tr in traces:
        if tr.horizon < grid[-1] * (1 - 1e-12):
            raise AnalysisError("trace shorter than the plan")
        idx = np.searchsorted(tr.times, grid * (1 + 1e-12) + 1e-12, side="right") - 1
        rows.append(np.abs(tr.q[idx] - Qbar).max(axis=1))
    if not rows:
        raise AnalysisError("empty ensemble")
    seg = plan.segment_index.astype(float)
    ch = plan.delta_choice
    log_strict = ch.log10_strict * math.log(10) if ch is not None else math.log(plan.delta)
    return ClosenessReport(
        n=plan.n,
        grid=grid,
        segment_index=plan.segment_index,
        bound_strict=_bounds(log_strict, c, seg, plan.n),
        bound_practical=_bounds(math.log(plan.delta), c, seg, plan.n),
        max_dev=np.array(rows),
        eps_diag=eps_diag,
    )


def is_nondecreasing(values: Sequence[float]) -> bool:
    return all(b >= a for a, b in zip(values, values[1:]))
