"""Finite decomposition of positive fluid solutions on two-station networks.

A station aggregate of a piecewise-linear solution can only vanish at
breakpoints or on whole segments.  Ordering the zero times of both stations
gives runs of consecutive zeros belonging to one station; during such a run
the other station stays positive.  Replacing the solution on each run by its
chord makes the running station identically zero there without breaking
non-idling (both endpoints are zero for one station, the other never
empties), so the domain splits into boundary segments and interior segments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fluid import DEFAULT_TOL, FluidError, FluidSolution, linearize_segment, station_queues
from .network import NetworkSpec, derived_constants

ZERO_TOL = 1e-9
SNAP = 1e-9
POSITIVE, ZERO = "positive", "zero"


class FdpError(FluidError):
    pass


class DegenerateSolution(FdpError):
    pass


class StationCountError(FdpError):
    pass


@dataclass(frozen=True)
class Phase:
    start: float
    end: float
    kind: str  # "boundary" or "interior"
    zero_station: int | None = None


@dataclass
class Decomposition:
    modified: FluidSolution
    cut_times: list[float]
    phase_labels: list[tuple[str, str]]

    @property
    def M(self) -> int:
        return len(self.cut_times) - 1

    def to_json(self) -> dict:
        return {
            "modified": self.modified.to_json(),
            "cut_times": list(map(float, self.cut_times)),
            "phase_labels": [list(lab) for lab in self.phase_labels],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Decomposition":
        return cls(
            FluidSolution.from_json(obj["modified"]),
            [float(x) for x in obj["cut_times"]],
            [tuple(lab) for lab in obj["phase_labels"]],
        )


def _require_two(net: NetworkSpec) -> None:
    if net.J != 2:
        raise StationCountError(f"decomposition is only available for two stations, got J={net.J}")


def _zero_runs(net: NetworkSpec, sol: FluidSolution, tol: float) -> list[tuple[int, float, float]]:
    """Maximal runs ``(station, first, last)`` of consecutive zero times of one station."""
    Qs = station_queues(net, sol)
    zero = Qs <= tol
    both = np.nonzero(zero.all(axis=1))[0]
    if both.size:
        t = sol.breakpoints[both[0]]
        raise DegenerateSolution(f"both station queues vanish at t={t}")
    runs: list[list] = []
    for k in range(sol.breakpoints.size):
        for s in (0, 1):
            if zero[k, s]:
                t = float(sol.breakpoints[k])
                if runs and runs[-1][0] == s:
                    runs[-1][2] = t
                else:
                    runs.append([s, t, t])
    out = []
    for s, a, b in runs:
        if b - a < SNAP:
            b = a
        out.append((s, a, b))
    return out


def detect_phase_sequence(net: NetworkSpec, sol: FluidSolution, tol: float = ZERO_TOL) -> list[Phase]:
    """Alternating boundary / interior phases covering the solution's domain."""
    _require_two(net)
    if np.any(sol.norms() <= tol):
        raise DegenerateSolution("the solution must stay positive")
    phases: list[Phase] = []
    cur = float(sol.start)
    for s, a, b in _zero_runs(net, sol, tol):
        if a > cur:
            phases.append(Phase(cur, a, "interior"))
        phases.append(Phase(a, b, "boundary", s))
        cur = b
    if cur < sol.end or not phases:
        phases.append(Phase(cur, float(sol.end), "interior"))
    return phases


def _labels(phase: Phase) -> tuple[str, str]:
    if phase.kind == "interior":
        return (POSITIVE, POSITIVE)
    lab = [POSITIVE, POSITIVE]
    lab[phase.zero_station] = ZERO
    return tuple(lab)


def fdp_decompose(net: NetworkSpec, sol: FluidSolution, tol: float = ZERO_TOL) -> Decomposition:
    phases = detect_phase_sequence(net, sol, tol)
    mod = sol
    for ph in phases:
        if ph.kind == "boundary" and ph.end > ph.start:
            mod = linearize_segment(mod, ph.start, ph.end)
    cuts = [phases[0].start]
    labels = []
    for ph in phases:
        if ph.end > ph.start:
            cuts.append(ph.end)
            labels.append(_labels(ph))
        elif ph.end > cuts[-1]:
            cuts.append(ph.end)
    return Decomposition(mod, cuts, labels)


@dataclass
class FdpReport:
    violations: list[str] = field(default_factory=list)
    M: int = 0
    M_bound: float = math.inf

    @property
    def ok(self) -> bool:
        return not self.violations


def _grid_norm_inf(sol: FluidSolution) -> float:
    return float(sol.norms().min())


def fdp_bound_check(
    net: NetworkSpec, sol: FluidSolution, dec: Decomposition, tol: float = ZERO_TOL
) -> FdpReport:
    """Count bound, agreement at cuts, sign constancy, infimum and cycle spacing."""
    _require_two(net)
    rep = FdpReport()
    v = rep.violations
    c = derived_constants(net).c_big
    mod = dec.modified
    cuts = np.asarray(dec.cut_times, float)
    theta = sol.end - sol.start
    inf_q = _grid_norm_inf(sol)
    rep.M = dec.M
    rep.M_bound = 2 * c * theta / inf_q + 2 if inf_q > 0 else math.inf
    if rep.M > rep.M_bound:
        v.append(f"M={rep.M} exceeds bound {rep.M_bound}")
    if len(dec.phase_labels) != dec.M:
        v.append("phase label count does not match interval count")
    if np.any(np.diff(cuts) <= 0) or cuts[0] != sol.start or cuts[-1] != sol.end:
        v.append("cut times must increase from the start to the end of the domain")
    for t in cuts:
        if not np.array_equal(mod.queue_at(t), sol.queue_at(t)):
            v.append(f"modified solution differs from the input at cut t={t}")
    if _grid_norm_inf(mod) < inf_q - DEFAULT_TOL:
        v.append("modified solution has a smaller infimum")
    bp = mod.breakpoints
    mids = 0.5 * (bp[1:] + bp[:-1])
    for m, lab in enumerate(dec.phase_labels[: max(0, cuts.size - 1)]):
        a, b = cuts[m], cuts[m + 1]
        inner_bp = bp[(bp > a) & (bp < b)]
        inner_mid = mids[(mids > a) & (mids < b)]
        pts = np.concatenate([inner_bp, inner_mid, [0.5 * (a + b)]])
        Qs = np.stack([mod.queues_at(pts)[:, members].sum(axis=1) for members in net.stations], axis=1)
        for s in (0, 1):
            if lab[s] == ZERO and np.any(Qs[:, s] > tol):
                v.append(f"station {s} labelled zero but positive on ({a}, {b})")
            if lab[s] == POSITIVE and np.any(Qs[:, s] <= 0):
                v.append(f"station {s} labelled positive but vanishes on ({a}, {b})")
    # consecutive opposite-station boundary starts are at least inf||Q|| / C apart
    starts = []
    for m, lab in enumerate(dec.phase_labels):
        if ZERO in lab:
            s = lab.index(ZERO)
            if not starts or starts[-1][0] != s:
                starts.append((s, cuts[m]))
    for (_, t1), (_, t2) in zip(starts, starts[1:]):
        if t2 - t1 < inf_q / c - DEFAULT_TOL:
            v.append(f"boundary phases at {t1} and {t2} closer than inf||Q||/C")
    return rep
