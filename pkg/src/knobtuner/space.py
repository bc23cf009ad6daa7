"""Knobs, value domains, configurations, and deployment context records.

Everything here is an immutable value object. Mutation happens by
constructing new values (see merge_subconfig), which keeps states safe to
share across the search tree.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Iterable, Mapping, Union

from .errors import ConfigError, SpaceMismatch, UnknownKnob

Value = Union[int, float, bool, str]

REL_TOL = 1e-9
ABS_TOL = 1e-12

PROVENANCE_DEFAULT = "default"
PROVENANCE_TUNED = "tuned"


def is_scalar(v: Any) -> bool:
    return isinstance(v, (int, float, bool, str))


def values_equal(a: Value, b: Value, rel_tol: float = REL_TOL) -> bool:
    """Compare two knob values; reals with relative tolerance."""
    if isinstance(a, bool) or isinstance(b, bool):
        return isinstance(a, bool) and isinstance(b, bool) and a == b
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return math.isclose(a, b, rel_tol=rel_tol, abs_tol=ABS_TOL)
    return a == b


@lru_cache(maxsize=256)
def _compiled(pattern: str) -> "re.Pattern[str]":
    return re.compile(pattern)


@dataclass(frozen=True)
class IntRange:
    lo: int
    hi: int
    step: int = 1

    def __post_init__(self):
        if not isinstance(self.lo, int) or not isinstance(self.hi, int):
            raise ConfigError(f"integer range bounds must be ints: [{self.lo}, {self.hi}]")
        if self.lo > self.hi:
            raise ConfigError(f"integer range has lo > hi: [{self.lo}, {self.hi}]")
        if not isinstance(self.step, int) or self.step <= 0:
            raise ConfigError(f"integer range step must be a positive int, got {self.step}")

    def contains(self, v: Value) -> bool:
        if isinstance(v, bool) or not isinstance(v, int):
            return False
        return self.lo <= v <= self.hi and (v - self.lo) % self.step == 0

    @property
    def span(self) -> float:
        return float(self.hi - self.lo)


@dataclass(frozen=True)
class RealRange:
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise ConfigError(f"real range has lo > hi: [{self.lo}, {self.hi}]")

    def contains(self, v: Value) -> bool:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            return False
        lo_ok = v >= self.lo or math.isclose(v, self.lo, rel_tol=REL_TOL, abs_tol=ABS_TOL)
        hi_ok = v <= self.hi or math.isclose(v, self.hi, rel_tol=REL_TOL, abs_tol=ABS_TOL)
        return lo_ok and hi_ok

    @property
    def span(self) -> float:
        return float(self.hi - self.lo)


@dataclass(frozen=True)
class BoolDomain:
    def contains(self, v: Value) -> bool:
        return isinstance(v, bool)


@dataclass(frozen=True)
class EnumDomain:
    values: tuple[str, ...]

    def __post_init__(self):
        if not self.values:
            raise ConfigError("enumeration domain needs at least one value")
        if len(set(self.values)) != len(self.values):
            raise ConfigError(f"enumeration values repeat: {self.values}")
        for v in self.values:
            if not isinstance(v, str):
                raise ConfigError(f"enumeration values must be strings, got {v!r}")

    def contains(self, v: Value) -> bool:
        return isinstance(v, str) and v in self.values


@dataclass(frozen=True)
class PatternDomain:
    pattern: str = ".*"

    def __post_init__(self):
        try:
            _compiled(self.pattern)
        except re.error as exc:
            raise ConfigError(f"bad validation pattern {self.pattern!r}: {exc}") from exc

    def contains(self, v: Value) -> bool:
        return isinstance(v, str) and _compiled(self.pattern).fullmatch(v) is not None


Domain = Union[IntRange, RealRange, BoolDomain, EnumDomain, PatternDomain]


def domain_kind(domain: Domain) -> str:
    """Short tag for prompts and reports: integer, real, boolean, enum, string."""
    if isinstance(domain, IntRange):
        return "integer"
    if isinstance(domain, RealRange):
        return "real"
    if isinstance(domain, BoolDomain):
        return "boolean"
    if isinstance(domain, EnumDomain):
        return "enum"
    return "string"


@dataclass(frozen=True)
class SpecialValue:
    value: Value
    meaning: str


@dataclass(frozen=True)
class Knob:
    """One named, typed parameter of the target system."""

    name: str
    domain: Domain
    default: Value
    cluster_id: str = ""
    unit: str = ""
    description: str = ""
    special_values: tuple[SpecialValue, ...] = ()

    def __post_init__(self):
        if not self.name:
            raise ConfigError("knob name must be non-empty")
        if not self.permits(self.default):
            raise ConfigError(
                f"knob {self.name}: default {self.default!r} is outside the domain "
                "and not a listed special value"
            )

    def permits(self, v: Value) -> bool:
        if self.domain.contains(v):
            return True
        return any(values_equal(v, sp.value) for sp in self.special_values)


def value_in_domain(knob: Knob, v: Value) -> bool:
    """True iff v lies in the knob's domain or equals a special value."""
    return knob.permits(v)


def coerce_value(knob: Knob, raw: Any) -> Value:
    """Best-effort conversion of a raw scalar to the knob's value type.

    Raises ValueError when no sensible conversion exists. Callers that
    tolerate malformed values (so a later validation step can flag them)
    should catch and keep the raw scalar.
    """
    if not is_scalar(raw):
        raise ValueError(f"knob {knob.name}: non-scalar value {raw!r}")
    d = knob.domain
    if isinstance(d, IntRange):
        if isinstance(raw, bool):
            raise ValueError(f"knob {knob.name}: boolean for integer domain")
        if isinstance(raw, int):
            return raw
        if isinstance(raw, float) and raw.is_integer():
            return int(raw)
        if isinstance(raw, str):
            return int(raw.strip())
        raise ValueError(f"knob {knob.name}: cannot read {raw!r} as integer")
    if isinstance(d, RealRange):
        if isinstance(raw, bool):
            raise ValueError(f"knob {knob.name}: boolean for real domain")
        if isinstance(raw, (int, float)):
            return float(raw)
        if isinstance(raw, str):
            return float(raw.strip())
        raise ValueError(f"knob {knob.name}: cannot read {raw!r} as real")
    if isinstance(d, BoolDomain):
        if isinstance(raw, bool):
            return raw
        if isinstance(raw, str) and raw.strip().lower() in ("true", "false"):
            return raw.strip().lower() == "true"
        raise ValueError(f"knob {knob.name}: cannot read {raw!r} as boolean")
    if isinstance(raw, str):
        return raw
    raise ValueError(f"knob {knob.name}: expected a string, got {raw!r}")


def nearest_valid(knob: Knob, v: Value) -> Value:
    """Snap a proposed value to the nearest valid one.

    Integer domains round to the closest in-range lattice point, ties
    toward the default; real domains clamp to the range. Non-numeric
    domains fall back to the default when the value is not permitted.
    """
    if knob.permits(v):
        return v
    d = knob.domain
    if isinstance(d, IntRange) and isinstance(v, (int, float)) and not isinstance(v, bool):
        n_steps = (d.hi - d.lo) // d.step
        idx = (float(v) - d.lo) / d.step
        cands = sorted({min(max(i, 0), n_steps) for i in (math.floor(idx), math.ceil(idx))})
        vals = [d.lo + i * d.step for i in cands]
        if len(vals) == 1:
            return vals[0]
        a, b = vals
        da, db = abs(float(v) - a), abs(float(v) - b)
        if not math.isclose(da, db, rel_tol=REL_TOL, abs_tol=ABS_TOL):
            return a if da < db else b
        if isinstance(knob.default, (int, float)) and not isinstance(knob.default, bool):
            ga, gb = abs(a - knob.default), abs(b - knob.default)
            if not math.isclose(ga, gb, rel_tol=REL_TOL, abs_tol=ABS_TOL):
                return a if ga < gb else b
        return a
    if isinstance(d, RealRange) and isinstance(v, (int, float)) and not isinstance(v, bool):
        return min(max(float(v), d.lo), d.hi)
    return knob.default


def normalized_gap(knob: Knob, a: Value, b: Value) -> float:
    """Distance between two values scaled into [0, 1] by the domain width.

    Categorical domains (and uncomparable values) give 0 or 1.
    """
    d = knob.domain
    if isinstance(d, (IntRange, RealRange)):
        try:
            fa, fb = float(a), float(b)  # type: ignore[arg-type]
        except (TypeError, ValueError):
            return 0.0 if values_equal(a, b) else 1.0
        if isinstance(a, bool) or isinstance(b, bool):
            return 0.0 if values_equal(a, b) else 1.0
        if d.span == 0:
            return 0.0
        return min(abs(fa - fb) / d.span, 1.0)
    return 0.0 if values_equal(a, b) else 1.0


@dataclass(frozen=True)
class Cluster:
    """A functional group of knobs (ordering, validation, networking, ...)."""

    id: str
    role: str = ""
    description: str = ""

    def __post_init__(self):
        if not self.id:
            raise ConfigError("cluster id must be non-empty")


@dataclass(frozen=True)
class Configuration:
    """A complete assignment of values to all knobs of a space.

    Assignments are not checked against domains here: proposals flow
    through the search unvalidated until a validation action inspects
    them. `provenance` marks each knob default or tuned.
    """

    assignments: Mapping[str, Value]
    provenance: Mapping[str, str] = field(default_factory=dict)

    def value(self, name: str) -> Value:
        try:
            return self.assignments[name]
        except KeyError:
            raise UnknownKnob(f"no knob named {name!r}") from None

    def tuned_names(self) -> tuple[str, ...]:
        return tuple(
            n for n in self.assignments if self.provenance.get(n) == PROVENANCE_TUNED
        )

    def to_flat_dict(self) -> dict[str, Value]:
        return dict(self.assignments)


@dataclass(frozen=True)
class ConfigSpace:
    """The full knob set plus its cluster partition."""

    knobs: tuple[Knob, ...]
    clusters: tuple[Cluster, ...]

    def __post_init__(self):
        names = [k.name for k in self.knobs]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise ConfigError(f"duplicate knob names: {dupes}")
        ids = [c.id for c in self.clusters]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate cluster ids")
        known = set(ids)
        for k in self.knobs:
            if k.cluster_id not in known:
                raise ConfigError(
                    f"knob {k.name} references unknown cluster {k.cluster_id!r}"
                )
        object.__setattr__(self, "_by_name", {k.name: k for k in self.knobs})

    def __len__(self) -> int:
        return len(self.knobs)

    def __contains__(self, name: str) -> bool:
        return name in self._by_name  # type: ignore[attr-defined]

    def knob(self, name: str) -> Knob:
        try:
            return self._by_name[name]  # type: ignore[attr-defined]
        except KeyError:
            raise UnknownKnob(f"no knob named {name!r}") from None

    def names(self) -> tuple[str, ...]:
        return tuple(k.name for k in self.knobs)

    def cluster_ids(self) -> tuple[str, ...]:
        return tuple(c.id for c in self.clusters)

    def cluster(self, cluster_id: str) -> Cluster:
        for c in self.clusters:
            if c.id == cluster_id:
                return c
        raise UnknownKnob(f"no cluster named {cluster_id!r}")

    def knobs_in(self, cluster_id: str) -> tuple[Knob, ...]:
        return tuple(k for k in self.knobs if k.cluster_id == cluster_id)

    def default_configuration(self) -> Configuration:
        return Configuration(
            assignments={k.name: k.default for k in self.knobs},
            provenance={k.name: PROVENANCE_DEFAULT for k in self.knobs},
        )


def merge_subconfig(base: Configuration, delta: Mapping[str, Value]) -> Configuration:
    """Overlay a partial assignment; touched knobs become tuned.

    The base is never mutated and unmentioned knobs keep their values.
    """
    assignments = dict(base.assignments)
    provenance = dict(base.provenance)
    for name, v in delta.items():
        if name not in assignments:
            raise UnknownKnob(f"no knob named {name!r}")
        assignments[name] = v
        provenance[name] = PROVENANCE_TUNED
    return Configuration(assignments=assignments, provenance=provenance)


def diff_configs(
    a: Configuration, b: Configuration
) -> list[tuple[str, Value, Value]]:
    """Knobs whose values differ between two configurations of one space."""
    if set(a.assignments) != set(b.assignments):
        raise SpaceMismatch("configurations cover different knob sets")
    out = []
    for name in a.assignments:
        va, vb = a.assignments[name], b.assignments[name]
        if not values_equal(va, vb):
            out.append((name, va, vb))
    return out


@dataclass(frozen=True)
class HardwareNode:
    node: str
    cpus: int
    memory_mb: float
    storage_gb: float
    notes: str = ""

    def __post_init__(self):
        if self.cpus <= 0:
            raise ConfigError(f"hardware node {self.node}: cpus must be positive")


@dataclass(frozen=True)
class NetworkNode:
    name: str
    role: str
    org: str = ""

    def __post_init__(self):
        if not self.role:
            raise ConfigError(f"network node {self.name}: role must be non-empty")


@dataclass(frozen=True)
class NetworkTopology:
    nodes: tuple[NetworkNode, ...]
    edges: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        names = [n.name for n in self.nodes]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate network node names")
        declared = set(names)
        for a, b in self.edges:
            if a not in declared or b not in declared:
                raise ConfigError(f"topology edge ({a}, {b}) references undeclared nodes")


@dataclass(frozen=True)
class WorkloadSpec:
    name: str
    transaction_count: int
    rate_mode: str = "fixed"
    extra: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.transaction_count <= 0:
            raise ConfigError("workload transaction_count must be positive")

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "transaction_count": self.transaction_count,
            "rate_mode": self.rate_mode,
            "extra": dict(self.extra),
        }


@dataclass(frozen=True)
class SystemContext:
    """Hardware inventory, network topology, and the benchmark workload."""

    hardware: tuple[HardwareNode, ...]
    network: NetworkTopology
    workload: WorkloadSpec

    def min_cpus(self) -> int:
        return min((h.cpus for h in self.hardware), default=1)

    def hardware_dicts(self) -> list[dict[str, Any]]:
        return [
            {
                "node": h.node,
                "cpus": h.cpus,
                "memory_mb": h.memory_mb,
                "storage_gb": h.storage_gb,
                **({"notes": h.notes} if h.notes else {}),
            }
            for h in self.hardware
        ]

    def network_dict(self) -> dict[str, Any]:
        return {
            "nodes": [
                {"name": n.name, "role": n.role, **({"org": n.org} if n.org else {})}
                for n in self.network.nodes
            ],
            "edges": [list(e) for e in self.network.edges],
        }
