"""Bundled networks and the hand-derived Rybko-Stolyar witness.

RS classes in index order are a=(0,0) at station A, b=(0,1) at B,
c=(1,0) at B and e=(1,1) at A.  Starting from ``(x, 0, 0, 0)`` the exit
classes b and e starve the entry classes in turn; one full cycle lasts ``6x``
and ends in ``(4x, 0, 0, 0)``.  Chaining cycles backwards gives a solution
with ``Q(2m) = (m, 0, 0, 0)`` and ``||Q(t)|| = t/2``, which leaves zero in
finite time.  The cycles accumulate at ``t = 0``; below ``depth`` of them the
solution is replaced by its chord from the origin, whose endpoint mass is far
below the default check tolerance.
"""
from __future__ import annotations

import numpy as np

from .fluid import FluidSolution
from .network import NetworkSpec, simple_network

RS_PRIORITY_PAIRS = [[(1, 1), (0, 0)], [(0, 1), (1, 0)]]


def single_queue(lam: float = 1.0, mu: float = 2.0, family: str = "exponential") -> NetworkSpec:
    return simple_network([[0]], [lam], [[mu]], stations=1, family=family)


def rybko_stolyar(
    lam: float = 1.0, fast: float = 6.0, slow: float = 1.5, family: str = "exponential"
) -> NetworkSpec:
    return simple_network([[0, 1], [1, 0]], [lam, lam], [[fast, slow], [fast, slow]], stations=2, family=family)


# per unit of cycle mass x: (time offset, state, allocation increment since previous point)
_CYCLE = [
    (0.2, (0.0, 0.9, 0.2, 0.0), (0.2, 0.2, 0.0, 0.0)),
    (2.0, (0.0, 0.0, 2.0, 0.0), (0.3, 1.8, 0.0, 0.0)),
    (2.4, (0.4, 0.0, 0.0, 1.8), (0.0, 0.0, 0.4, 0.4)),
    (6.0, (4.0, 0.0, 0.0, 0.0), (0.0, 0.0, 0.6, 3.6)),
]
_T_AT_START = np.array([1 / 6, 2 / 3, 1 / 3, 4 / 3])


def rs_witness(depth: int = 16) -> FluidSolution:
    """Witness on ``[0, 1]`` for the default RS fixture with ``Q(1) = (0.5, 0, 0, 0)``."""
    if depth < 1:
        raise ValueError("depth must be at least 1")
    masses = [0.5 * 4.0 ** (-k) for k in range(depth, 0, -1)]
    bp = [0.0]
    q = [np.zeros(4)]
    t = [np.zeros(4)]
    x0 = masses[0]
    bp.append(2 * x0)
    q.append(np.array([x0, 0, 0, 0]))
    t.append(x0 * _T_AT_START)
    for x in masses:
        base_t = x * _T_AT_START
        acc = base_t.copy()
        for off, state, inc in _CYCLE:
            acc = acc + x * np.array(inc)
            bp.append(2 * x + off * x)
            q.append(x * np.array(state))
            t.append(acc.copy())
    return FluidSolution(np.array(bp), np.array(q), np.array(t))
