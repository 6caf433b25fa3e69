"""Large-deviation constants and Monte-Carlo tail estimates for primitive sequences.

For an i.i.d. nonnegative sequence with mean ``alpha`` the upper tail of the
partial sums decays at rate ``sup_theta theta(alpha+eps) - log M(theta)`` and
the lower tail at ``sup_theta -theta(alpha-eps) - log M(-theta)``, where ``M``
is the moment generating function.  The conditional overshoot bound ``F``
controls the first (residual) term so the constants do not depend on the
residual ``z``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .network import DistSpec, NetworkSpec

SEARCH_TOL = 1e-10
_CHUNK = 20_000


class LdError(ValueError):
    pass


@dataclass(frozen=True)
class LdCertificate:
    family: str
    alpha: float
    theta0: float  # F is finite on [0, theta0)
    f_bound: str
    F: Callable[[float], float]
    log_mgf: Callable[[float], float]
    dist: DistSpec | None = None

    def rate_fn(self, eps: float, direction: str = "upper") -> tuple[float, float]:
        """``eps -> (L(eps), V(eps))``."""
        L, _, V = ld_constants(self.dist, eps, direction)
        return L, V


def _log_uniform_mgf(lo: float, hi: float, th: float) -> float:
    if abs(th) < 1e-12:
        return th * 0.5 * (lo + hi)
    w = hi - lo
    # log((e^{th hi} - e^{th lo}) / (th w)), stable for either sign of th
    top = max(th * hi, th * lo)
    return top + math.log(-math.expm1(-abs(th) * w)) - math.log(abs(th) * w)


def check_exptail(dist: DistSpec) -> LdCertificate:
    cert = _certificate(dist)
    object.__setattr__(cert, "dist", dist)
    return cert


def _certificate(dist: DistSpec) -> LdCertificate:
    f, p = dist.family, dist.params
    if f == "exponential":
        lam = p[0]

        def F(th):
            return lam / (lam - th) if th < lam else math.inf

        def lm(th):
            return math.log(lam / (lam - th)) if th < lam else math.inf

        return LdCertificate(f, 1 / lam, lam, f"{lam}/({lam}-theta), theta<{lam}", F, lm)
    if f == "erlang":
        k, lam = int(p[0]), p[1]

        def F(th):
            return (lam / (lam - th)) ** k if th < lam else math.inf

        def lm(th):
            return k * math.log(lam / (lam - th)) if th < lam else math.inf

        return LdCertificate(f, k / lam, lam, f"({lam}/({lam}-theta))^{k}, theta<{lam}", F, lm)
    if f == "deterministic":
        a = p[0]
        return LdCertificate(f, a, math.inf, f"exp({a} theta)", lambda th: math.exp(th * a), lambda th: th * a)
    if f == "uniform-bounded":
        lo, hi = p
        return LdCertificate(
            f,
            0.5 * (lo + hi),
            math.inf,
            f"exp({hi} theta)",
            lambda th: math.exp(th * hi),
            lambda th: _log_uniform_mgf(lo, hi, th),
        )
    raise LdError(f"unsupported family {f!r}")


def _support(cert: LdCertificate, dist_params) -> tuple[float, float]:
    if cert.family == "deterministic":
        return dist_params[0], dist_params[0]
    if cert.family == "uniform-bounded":
        return tuple(dist_params)
    return 0.0, math.inf


def _maximize(g: Callable[[float], float], hi: float | None, start: float) -> float:
    """Argmax of a concave ``g`` on ``[0, hi)`` (``hi=None``: unbounded, bracket grown geometrically)."""
    if hi is None:
        b = max(start, 1e-6)
        while g(2 * b) > g(b):
            b *= 2
            if b > 1e12:
                break
        hi = 2 * b
    else:
        hi = hi * (1 - 1e-13)
    res = minimize_scalar(lambda th: -g(th), bounds=(0.0, hi), method="bounded", options={"xatol": SEARCH_TOL})
    return float(res.x)


def ld_constants(dist: DistSpec, eps: float, direction: str = "upper") -> tuple[float, float, float]:
    """``(L, theta_star, V)``; ``L = inf`` when the deviation lies outside the support."""
    cert, params = _certificate(dist), dist.params
    if not eps > 0:
        raise LdError("epsilon must be positive")
    alpha = cert.alpha
    lo, hi = _support(cert, params)
    lm = cert.log_mgf
    if direction == "upper":
        if alpha + eps >= hi:
            return math.inf, math.inf, 1.0
        theta_sup = cert.theta0 if math.isfinite(cert.theta0) else None

        def g(th):
            return th * (alpha + eps) - lm(th)

        th = _maximize(g, theta_sup, 0.5 * cert.theta0 if theta_sup else 1.0 / alpha)
        return g(th), th, cert.F(th)
    if direction == "lower":
        if not eps < alpha:
            raise LdError("the lower tail needs epsilon < mean")
        if alpha - eps <= lo:
            return math.inf, math.inf, 1.0

        def g(th):
            return -th * (alpha - eps) - lm(-th)

        th = _maximize(g, None, 1.0 / alpha)
        L = g(th)
        return L, th, math.exp(L + th * (alpha - eps))
    raise LdError("direction is 'upper' or 'lower'")


def chernoff_rate(dist: DistSpec, epsilon: float, direction: str = "upper") -> tuple[float, float]:
    L, th, _ = ld_constants(dist, epsilon, direction)
    return L, th


def ld_time_bound(dist: DistSpec, epsilon: float, n: int) -> float:
    """Two-sided bound ``V_u e^{-L_u n} + V_l e^{-L_l n}`` on the partial-sum deviation probability."""
    total = 0.0
    for direction in ("upper", "lower"):
        if direction == "lower" and epsilon >= dist.mean:
            continue  # sums are nonnegative: the lower deviation is impossible
        L, _, V = ld_constants(dist, epsilon, direction)
        if math.isfinite(L):
            total += V * math.exp(-L * n)
    return total


def network_ld_constants(net: NetworkSpec, epsilon: float) -> dict:
    """One ``(L, V)`` pair for every primitive sequence of ``net``: the smallest
    rate and the largest prefactor over arrivals and services, both tails."""
    per = []
    dists = [("arrival", i, t.arrival) for i, t in enumerate(net.types)]
    dists += [("service", k, net.types[i].stages[j].service) for k, (i, j) in enumerate(net.classes)]
    for kind, idx, dist in dists:
        for direction in ("upper", "lower"):
            if direction == "lower" and epsilon >= dist.mean:
                continue
            L, _, V = ld_constants(dist, epsilon, direction)
            per.append({"sequence": kind, "index": idx, "direction": direction, "L": L, "V": V})
    finite = [r for r in per if math.isfinite(r["L"])]
    return {
        "L": min((r["L"] for r in finite), default=math.inf),
        "V": max((r["V"] for r in finite), default=1.0),
        "aggregation": "min L, max V over primitive sequences",
        "per_sequence": per,
    }


def _draw(dist: DistSpec, rng: np.random.Generator, size) -> np.ndarray:
    f, p = dist.family, dist.params
    if f == "exponential":
        return rng.exponential(1 / p[0], size)
    if f == "erlang":
        return rng.gamma(p[0], 1 / p[1], size)
    if f == "deterministic":
        return np.full(size, p[0])
    if f == "uniform-bounded":
        return rng.uniform(p[0], p[1], size)
    raise LdError(f"unsupported family {f!r}")


def _sum_draws(dist: DistSpec, rng: np.random.Generator, count: int, size: int) -> np.ndarray:
    """Sums of ``count`` i.i.d. draws, ``size`` times."""
    if count == 0:
        return np.zeros(size)
    f, p = dist.family, dist.params
    if f == "exponential":
        return rng.gamma(count, 1 / p[0], size)
    if f == "erlang":
        return rng.gamma(count * p[0], 1 / p[1], size)
    if f == "deterministic":
        return np.full(size, count * p[0])
    out = np.zeros(size)
    step = max(1, _CHUNK * 10 // max(count, 1))
    for a in range(0, size, step):
        b = min(size, a + step)
        out[a:b] = rng.uniform(p[0], p[1], (b - a, count)).sum(axis=1)
    return out


@dataclass
class ConditionalDraw:
    values: np.ndarray
    acceptance: float = 1.0


def conditional_first(dist: DistSpec, z: float, rng: np.random.Generator, size: int, cap: int = 10**7) -> ConditionalDraw:
    """Draws of ``Z_1`` given ``Z_1 >= z``; ``None``-sized result when the event is empty."""
    f, p = dist.family, dist.params
    if f == "exponential":
        return ConditionalDraw(z + rng.exponential(1 / p[0], size))
    if f == "deterministic":
        if z > p[0]:
            return ConditionalDraw(np.empty(0), 0.0)
        return ConditionalDraw(np.full(size, p[0]))
    if f == "uniform-bounded":
        lo, hi = p
        if z >= hi:
            return ConditionalDraw(np.empty(0), 0.0)
        return ConditionalDraw(rng.uniform(max(lo, z), hi, size))
    # erlang: rejection
    kept, tried = [], 0
    got = 0
    while got < size and tried < cap:
        batch = _draw(dist, rng, max(size, 1024))
        tried += batch.size
        ok = batch[batch >= z]
        kept.append(ok)
        got += ok.size
    vals = np.concatenate(kept)[:size] if kept else np.empty(0)
    return ConditionalDraw(vals, got / tried if tried else 0.0)


def empirical_ld_time(dist: DistSpec, epsilon: float, n: int, z: float, trials: int, seed: int) -> float:
    """Frequency of ``|sum_{i<=n} Z_i - z - alpha n| >= eps n`` given ``Z_1 >= z``."""
    if n < 1 or trials < 1:
        raise LdError("need n >= 1 and trials >= 1")
    rng = np.random.default_rng(seed)
    first = conditional_first(dist, z, rng, trials)
    if first.values.size == 0:
        return math.nan
    m = first.values.size
    s = first.values + _sum_draws(dist, rng, n - 1, m)
    dev = np.abs(s - z - dist.mean * n)
    return float(np.mean(dev >= epsilon * n))


def _counts(dist: DistSpec, rng, first: np.ndarray, horizon: float) -> np.ndarray:
    """``N(horizon) = max{n : Z_1 + ... + Z_n <= horizon}`` for each given ``Z_1``."""
    alpha = dist.mean
    size = first.size
    counts = (first <= horizon).astype(np.int64)
    pos = first.copy()
    active = first <= horizon
    block = int(max(8, math.ceil(horizon / alpha * 1.2 + 10 * math.sqrt(horizon / alpha + 1))))
    while active.any():
        idx = np.nonzero(active)[0]
        for a in range(0, idx.size, max(1, _CHUNK * 20 // block)):
            sel = idx[a : a + max(1, _CHUNK * 20 // block)]
            cs = pos[sel, None] + np.cumsum(_draw(dist, rng, (sel.size, block)), axis=1)
            counts[sel] += (cs <= horizon).sum(axis=1)
            pos[sel] = cs[:, -1]
        active = pos <= horizon
        block = max(8, block // 4)
    return counts[:size]


def empirical_ld_rate(dist: DistSpec, epsilon: float, t: float, z: float, trials: int, seed: int) -> float:
    """Frequency of ``|N(t + z) - t/alpha| >= eps t`` given ``Z_1 >= z``.

    ``N`` is obtained through ``N(s) >= m  <=>  Z_1 + ... + Z_m <= s``.
    """
    if not t > 0 or trials < 1:
        raise LdError("need t > 0 and trials >= 1")
    rng = np.random.default_rng(seed)
    first = conditional_first(dist, z, rng, trials)
    if first.values.size == 0:
        return math.nan
    N = _counts(dist, rng, first.values, t + z)
    return float(np.mean(np.abs(N - t / dist.mean) >= epsilon * t))


def binomial_sigma(p: float, trials: int) -> float:
    p = min(max(p, 0.0), 1.0)
    return math.sqrt(p * (1 - p) / trials)


def two_proportion_z(h1: int, n1: int, h2: int, n2: int) -> float:
    """Pooled two-proportion z statistic (0 when both counts vanish)."""
    p = (h1 + h2) / (n1 + n2)
    se = math.sqrt(p * (1 - p) * (1 / n1 + 1 / n2))
    if se == 0:
        return 0.0
    return (h1 / n1 - h2 / n2) / se
