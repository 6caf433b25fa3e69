"""Multitype network topologies, validation and derived constants.

A network has ``J`` single-server stations and ``I`` job types.  Type ``i``
enters at rate ``lambda_i`` and visits the stations of its route in order;
the pair (type, stage) is a *class*.  Classes are indexed ``0..d-1`` by type
first, then stage.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

FAMILIES = ("exponential", "erlang", "deterministic", "uniform-bounded")
MEAN_RTOL = 1e-9


class SpecError(ValueError):
    """Raised for malformed or invalid network/distribution input."""


@dataclass(frozen=True)
class DistSpec:
    """Distribution of a primitive sequence (interarrival or service times).

    Parameter conventions:

    - ``exponential``: ``(rate,)``
    - ``erlang``: ``(k, rate)``, mean ``k / rate``
    - ``deterministic``: ``(value,)``
    - ``uniform-bounded``: ``(lo, hi)`` with ``0 <= lo < hi``
    """

    family: str
    params: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))

    def problems(self) -> list[str]:
        f, p = self.family, self.params
        if f not in FAMILIES:
            return [f"unknown distribution family {f!r}"]
        want = {"exponential": 1, "erlang": 2, "deterministic": 1, "uniform-bounded": 2}[f]
        if len(p) != want:
            return [f"{f} takes {want} parameter(s), got {len(p)}"]
        if not all(math.isfinite(x) for x in p):
            return [f"{f} parameters must be finite"]
        if f == "uniform-bounded":
            lo, hi = p
            if lo < 0 or hi <= lo:
                return ["uniform-bounded needs 0 <= lo < hi"]
            return []
        if any(x <= 0 for x in p):
            return [f"{f} parameters must be positive"]
        if f == "erlang" and p[0] != int(p[0]):
            return ["erlang shape must be an integer"]
        return []

    @property
    def mean(self) -> float:
        f, p = self.family, self.params
        if f == "exponential":
            return 1.0 / p[0]
        if f == "erlang":
            return p[0] / p[1]
        if f == "deterministic":
            return p[0]
        return 0.5 * (p[0] + p[1])

    @property
    def bounded(self) -> bool:
        return self.family in ("deterministic", "uniform-bounded")

    @classmethod
    def exponential(cls, rate: float) -> "DistSpec":
        return cls("exponential", (rate,))

    @classmethod
    def deterministic(cls, value: float) -> "DistSpec":
        return cls("deterministic", (value,))

    def to_json(self) -> dict:
        return {"family": self.family, "params": list(self.params)}

    @classmethod
    def from_json(cls, obj: Any) -> "DistSpec":
        _strict_keys(obj, {"family", "params"}, "dist")
        params = obj["params"]
        if not isinstance(params, list) or not all(isinstance(x, (int, float)) for x in params):
            raise SpecError("dist params must be a number array")
        if not isinstance(obj["family"], str):
            raise SpecError("dist family must be a string")
        return cls(obj["family"], tuple(params))

    @classmethod
    def parse(cls, text: str) -> "DistSpec":
        """Parse ``family:p1,p2`` or a JSON dist object."""
        text = text.strip()
        if text.startswith("{"):
            return cls.from_json(json.loads(text))
        fam, _, rest = text.partition(":")
        try:
            params = tuple(float(x) for x in rest.split(",") if x.strip())
        except ValueError as exc:
            raise SpecError(f"bad dist parameters in {text!r}") from exc
        return cls(fam, params)


@dataclass(frozen=True)
class StageSpec:
    mu: float
    service: DistSpec


@dataclass(frozen=True)
class TypeSpec:
    route: tuple[int, ...]
    lam: float
    arrival: DistSpec
    stages: tuple[StageSpec, ...]


@dataclass(frozen=True)
class NetworkSpec:
    station_count: int
    types: tuple[TypeSpec, ...]
    # derived index maps, filled in __post_init__
    classes: tuple[tuple[int, int], ...] = field(init=False, repr=False)
    station_of: tuple[int, ...] = field(init=False, repr=False)

    def __post_init__(self):
        classes = tuple((i, j) for i, t in enumerate(self.types) for j in range(len(t.route)))
        object.__setattr__(self, "classes", classes)
        object.__setattr__(
            self, "station_of", tuple(self.types[i].route[j] for i, j in classes)
        )

    # -- index helpers -------------------------------------------------
    @property
    def I(self) -> int:
        return len(self.types)

    @property
    def J(self) -> int:
        return self.station_count

    @property
    def d(self) -> int:
        return len(self.classes)

    def class_index(self, i: int, j: int) -> int:
        return self.classes.index((i, j))

    @property
    def lam(self) -> list[float]:
        return [t.lam for t in self.types]

    @property
    def mu(self) -> list[float]:
        return [self.types[i].stages[j].mu for i, j in self.classes]

    @property
    def type_of(self) -> list[int]:
        return [i for i, _ in self.classes]

    @property
    def prev(self) -> list[int | None]:
        """Index of the upstream class, or None for first stages."""
        out = []
        for k, (i, j) in enumerate(self.classes):
            out.append(None if j == 0 else k - 1)
        return out

    @property
    def nxt(self) -> list[int | None]:
        out = []
        for k, (i, j) in enumerate(self.classes):
            out.append(None if j == len(self.types[i].route) - 1 else k + 1)
        return out

    @property
    def first_class(self) -> list[int]:
        return [self.classes.index((i, 0)) for i in range(self.I)]

    @property
    def last_class(self) -> list[int]:
        return [self.classes.index((i, len(t.route) - 1)) for i, t in enumerate(self.types)]

    @property
    def stations(self) -> list[list[int]]:
        """Class indices routed to each station (the station sets)."""
        out: list[list[int]] = [[] for _ in range(self.J)]
        for k, s in enumerate(self.station_of):
            if 0 <= s < self.J:
                out[s].append(k)
        return out

    # -- serialization -------------------------------------------------
    def to_json(self) -> dict:
        return {
            "stations": self.station_count,
            "types": [
                {
                    "route": list(t.route),
                    "lambda": t.lam,
                    "arrival": t.arrival.to_json(),
                    "stages": [{"mu": s.mu, "service": s.service.to_json()} for s in t.stages],
                }
                for t in self.types
            ],
        }

    @classmethod
    def from_json(cls, obj: Any) -> "NetworkSpec":
        _strict_keys(obj, {"stations", "types"}, "network")
        if not isinstance(obj["stations"], int) or isinstance(obj["stations"], bool):
            raise SpecError("'stations' must be an integer")
        if not isinstance(obj["types"], list):
            raise SpecError("'types' must be an array")
        types = []
        for t in obj["types"]:
            _strict_keys(t, {"route", "lambda", "arrival", "stages"}, "type")
            if not isinstance(t["route"], list) or not all(
                isinstance(x, int) and not isinstance(x, bool) for x in t["route"]
            ):
                raise SpecError("'route' must be an integer array")
            if not isinstance(t["stages"], list):
                raise SpecError("'stages' must be an array")
            stages = []
            for s in t["stages"]:
                _strict_keys(s, {"mu", "service"}, "stage")
                stages.append(StageSpec(_num(s["mu"], "mu"), DistSpec.from_json(s["service"])))
            types.append(
                TypeSpec(
                    tuple(t["route"]),
                    _num(t["lambda"], "lambda"),
                    DistSpec.from_json(t["arrival"]),
                    tuple(stages),
                )
            )
        net = cls(obj["stations"], tuple(types))
        return net

    @classmethod
    def load(cls, path) -> "NetworkSpec":
        with open(path) as fh:
            return cls.from_json(json.load(fh))

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)


def _strict_keys(obj: Any, allowed: set[str], what: str) -> None:
    if not isinstance(obj, dict):
        raise SpecError(f"{what} must be a JSON object")
    extra = set(obj) - allowed
    if extra:
        raise SpecError(f"unknown key(s) in {what}: {sorted(extra)}")
    missing = allowed - set(obj)
    if missing:
        raise SpecError(f"missing key(s) in {what}: {sorted(missing)}")


def _num(x: Any, name: str) -> float:
    if not isinstance(x, (int, float)) or isinstance(x, bool):
        raise SpecError(f"{name!r} must be a number")
    return float(x)


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def _rate_ok(x: float) -> bool:
    return math.isfinite(x) and x > 0


def validate_network(spec: NetworkSpec) -> ValidationReport:
    """List every violated invariant; an empty violation list means valid."""
    rep = ValidationReport()
    v = rep.violations
    if spec.station_count < 1:
        v.append("station count must be a positive integer")
    if not spec.types:
        v.append("network needs at least one type")
    for i, t in enumerate(spec.types):
        if len(t.route) < 1:
            v.append(f"type {i}: route must be non-empty")
        if len(t.stages) != len(t.route):
            v.append(f"type {i}: {len(t.stages)} stages for a route of length {len(t.route)}")
        for s in t.route:
            if not 0 <= s < spec.station_count:
                v.append(f"type {i}: route station {s} out of range [0, {spec.station_count})")
        if not _rate_ok(t.lam):
            v.append(f"type {i}: rate must be positive and finite (lambda={t.lam})")
        v.extend(f"type {i} arrival: {p}" for p in t.arrival.problems())
        if _rate_ok(t.lam) and not t.arrival.problems():
            if not math.isclose(t.arrival.mean, 1.0 / t.lam, rel_tol=MEAN_RTOL):
                v.append(f"type {i}: arrival mean {t.arrival.mean} != 1/lambda")
        for j, st in enumerate(t.stages):
            if not _rate_ok(st.mu):
                v.append(f"class ({i},{j}): rate must be positive and finite (mu={st.mu})")
            v.extend(f"class ({i},{j}) service: {p}" for p in st.service.problems())
            if _rate_ok(st.mu) and not st.service.problems():
                if not math.isclose(st.service.mean, 1.0 / st.mu, rel_tol=MEAN_RTOL):
                    v.append(f"class ({i},{j}): service mean {st.service.mean} != 1/mu")
    if not v and all(s.service.bounded for t in spec.types for s in t.stages):
        rep.warnings.append(
            "all service distributions are bounded; the reachability assumption "
            "for large queues is not guaranteed and is not checked"
        )
    return rep


def require_valid(spec: NetworkSpec) -> None:
    rep = validate_network(spec)
    if not rep.ok:
        raise SpecError("invalid network: " + "; ".join(rep.violations))


@dataclass(frozen=True)
class Constants:
    lambda_max: float
    mu_max: float
    j_max: int
    c_big: float
    class_count: int


def derived_constants(spec: NetworkSpec) -> Constants:
    """Rate maxima, longest route and the dominating constant ``c_big``.

    ``c_big`` is one more than ``13 (lambda_max + mu_max)^2 I j_max^3``.
    """
    require_valid(spec)
    lmax = max(max(t.lam, 1.0 / t.lam) for t in spec.types)
    mmax = max(max(m, 1.0 / m) for m in spec.mu)
    jmax = max(len(t.route) for t in spec.types)
    c = 13.0 * (lmax + mmax) ** 2 * spec.I * jmax**3 + 1.0
    return Constants(lmax, mmax, jmax, c, spec.d)


def simple_network(
    routes: Sequence[Sequence[int]],
    lam: Sequence[float],
    mu: Sequence[Sequence[float]],
    stations: int | None = None,
    family: str = "exponential",
) -> NetworkSpec:
    """Build a network with one distribution family for every primitive.

    Non-exponential families keep the mean ``1/rate``: erlang has 2 phases,
    uniform-bounded lives on ``[0, 2/rate]``.
    """

    def dist(rate: float) -> DistSpec:
        if family == "exponential":
            return DistSpec.exponential(rate)
        if family == "deterministic":
            return DistSpec.deterministic(1.0 / rate)
        if family == "erlang":
            return DistSpec("erlang", (2, 2.0 * rate))
        if family == "uniform-bounded":
            return DistSpec("uniform-bounded", (0.0, 2.0 / rate))
        raise SpecError(f"simple_network does not support family {family!r}")

    types = tuple(
        TypeSpec(
            tuple(r),
            float(l),
            dist(l),
            tuple(StageSpec(float(m), dist(m)) for m in ms),
        )
        for r, l, ms in zip(routes, lam, mu)
    )
    if stations is None:
        stations = max(max(r) for r in routes) + 1
    return NetworkSpec(stations, types)
