"""Linearly divergent fluid solutions built from a weak-instability witness.

The construction works over the doubling blocks ``[0, 1], [1, 2], [2, 4], ...``.
On block ``[2^n, 2^{n+1}]`` the witness stretched by ``2^n`` is replayed as
high-priority flow; whatever is already in the network is treated as
low-priority flow and receives the station capacity the witness leaves
unused, in class-index order.  Because the two flows are tracked separately
the output dominates the stretched witness classwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fluid import (
    DEFAULT_TOL,
    FluidError,
    FluidSolution,
    _integrate,
    check_all,
    concat,
    default_priority,
    make_solution,
    restrict,
    scale_solution,
    shift_to_origin,
)
from .network import NetworkSpec, derived_constants

ZERO_TOL = 1e-14


class WitnessError(FluidError):
    pass


@dataclass(frozen=True)
class Witness:
    """Non-idling solution on ``[0, 1]`` leaving zero immediately and staying positive."""

    sol: FluidSolution

    @property
    def final_norm(self) -> float:
        return float(np.abs(self.sol.q[-1]).sum())


def make_witness(net: NetworkSpec, sol: FluidSolution, tol: float = DEFAULT_TOL) -> Witness:
    """Check the witness invariants and wrap ``sol``."""
    if sol.start != 0.0 or not math.isclose(sol.end, 1.0, rel_tol=0, abs_tol=1e-12):
        raise WitnessError(f"witness must live on [0, 1], got [{sol.start}, {sol.end}]")
    if np.abs(sol.q[0]).sum() > ZERO_TOL:
        raise WitnessError("witness must start from the empty state")
    rep = check_all(net, sol, tol)
    if not rep.ok:
        raise WitnessError("witness fails the fluid checks:\n" + rep.summary())
    norms = sol.norms()
    mids = np.abs(sol.queues_at(0.5 * (sol.breakpoints[1:] + sol.breakpoints[:-1]))).sum(axis=1)
    if np.any(norms[1:] <= 0) or np.any(mids <= 0):
        raise WitnessError("witness must stay positive on (0, 1]")
    return Witness(sol)


def normalize_witness(net: NetworkSpec, raw: FluidSolution, tol: float = DEFAULT_TOL) -> Witness:
    """Trim ``raw`` to its last excursion from zero and rescale it onto ``[0, 1]``."""
    rep = check_all(net, raw, tol)
    if not rep.ok:
        raise WitnessError("raw solution fails the fluid checks:\n" + rep.summary())
    norms = raw.norms()
    if norms[0] > ZERO_TOL:
        raise WitnessError("raw solution must start from the empty state")
    nonzero = np.nonzero(norms > ZERO_TOL)[0]
    if nonzero.size == 0:
        raise WitnessError("solution never leaves zero: no witness")
    k0 = int(nonzero[-1])
    zeros = np.nonzero(norms[:k0] <= ZERO_TOL)[0]
    k_hat = int(zeros[-1])
    t_hat, t0 = raw.breakpoints[k_hat], raw.breakpoints[k0]
    piece = raw if (k_hat == 0 and k0 == raw.breakpoints.size - 1) else restrict(raw, t_hat, t0)
    piece = shift_to_origin(piece)
    span = t0 - t_hat
    out = piece if span == 1.0 else scale_solution(piece, 1.0 / span)
    q = out.q.copy()
    q[0] = 0.0
    bp = out.breakpoints.copy()
    bp[-1] = 1.0
    return make_witness(net, FluidSolution(bp, q, out.t), tol)


@dataclass(frozen=True)
class DivergenceCertificate:
    gamma1: float
    gamma0: float
    gamma: float
    c_big: float
    final_norm: float

    def floor_bound(self, q) -> float:
        """Lower bound on ``inf_t ||Q(t)||`` for the divergent solution started at ``q``."""
        return float(np.abs(np.asarray(q, float)).sum()) / 2 * min(self.gamma / self.c_big, 1.0)

    def to_json(self) -> dict:
        return {
            "gamma1": self.gamma1,
            "gamma0": self.gamma0,
            "gamma": self.gamma,
            "c_big": self.c_big,
            "final_norm": self.final_norm,
        }


def _min_norm_on(sol: FluidSolution, lo: float, hi: float) -> float:
    bp = sol.breakpoints
    inside = bp[(bp > lo) & (bp < hi)]
    pts = np.concatenate([[lo], inside, [hi]])
    return float(np.abs(sol.queues_at(pts)).sum(axis=1).min())


def gamma_of_witness(net: NetworkSpec, w: Witness) -> DivergenceCertificate:
    c = derived_constants(net).c_big
    v = w.final_norm
    lo = v / (4 * c)
    if lo >= 1.0:
        gamma1 = math.inf
        gamma0 = v / 4
    else:
        gamma1 = _min_norm_on(w.sol, lo, 1.0)
        gamma0 = min(v / 4, gamma1)
    return DivergenceCertificate(gamma1, gamma0, gamma0 / 2, c, v)


def doubling_blocks(horizon: float) -> list[tuple[float, float, float]]:
    """``(start, end, stretch)`` for ``[0,1], [1,2], [2,4], ...`` covering ``horizon``."""
    blocks = [(0.0, 1.0, 1.0)]
    n = 0
    while 2.0**n < horizon:
        blocks.append((2.0**n, 2.0 ** (n + 1), 2.0**n))
        n += 1
    return blocks


def _block(net, w: Witness, start: float, stretch: float, q_start, t_start, order):
    wbp = start + stretch * w.sol.breakpoints
    wq = stretch * w.sol.q
    wt = stretch * w.sol.t
    du = np.diff(wbp)
    dT = np.diff(wt, axis=0)
    share = np.stack([dT[:, m].sum(axis=1) / du for m in net.stations], axis=1)
    caps = np.clip(1.0 - share, 0.0, 1.0)
    run = _integrate(net, np.asarray(q_start, float), start, wbp[1:], caps, np.zeros(net.d), order)
    if run.truncated:
        raise FluidError("event cap exceeded while filling a doubling block")
    times = np.array(run.times)
    E = np.array(run.x)
    F = np.array(run.fill)
    Wq = np.stack([np.interp(times, wbp, wq[:, k]) for k in range(net.d)], axis=1)
    Wt = np.stack([np.interp(times, wbp, wt[:, k]) for k in range(net.d)], axis=1)
    return times, Wq + E, t_start + Wt + F


def build_divergent(net: NetworkSpec, w: Witness, q, horizon: float) -> FluidSolution:
    """Non-idling solution from ``q`` that keeps a stretched copy of the witness in it."""
    if horizon < 1:
        raise FluidError("horizon must be at least 1")
    q = np.asarray(q, dtype=float)
    if q.shape != (net.d,) or np.any(q < 0):
        raise FluidError("q must be a nonnegative vector of length d")
    if w.sol.d != net.d:
        raise WitnessError("witness does not match the network")
    order = default_priority(net)
    out = None
    q_cur, t_cur = q, np.zeros(net.d)
    for start, end, stretch in doubling_blocks(horizon):
        times, Q, T = _block(net, w, start, stretch, q_cur, t_cur, order)
        piece = make_solution(times, Q, T)
        out = piece if out is None else concat(out, piece)
        q_cur, t_cur = Q[-1], T[-1]
    if out.end > horizon:
        out = restrict(out, 0.0, horizon)
    return out


def verify_linear_divergence(sol: FluidSolution, gamma: float, tol: float = DEFAULT_TOL) -> bool:
    """True iff ``||Q(t)|| >= gamma t - tol`` at every breakpoint and segment midpoint."""
    bp = sol.breakpoints
    pts = np.concatenate([bp, 0.5 * (bp[1:] + bp[:-1])])
    norms = np.abs(sol.queues_at(pts)).sum(axis=1)
    return bool(np.all(norms >= gamma * pts - tol))


def empirical_rate(net: NetworkSpec, w: Witness, horizon: float = 2.0**10) -> float:
    """``min ||Q(t)|| / t`` over ``t in [1, horizon]`` for the solution built from zero.

    ``||Q||`` is linear between breakpoints, so ``||Q(t)||/t`` is monotone on
    each segment and the minimum sits at a breakpoint.
    """
    sol = build_divergent(net, w, np.zeros(net.d), horizon)
    bp = sol.breakpoints
    sel = bp >= 1.0
    return float((sol.norms()[sel] / bp[sel]).min())
