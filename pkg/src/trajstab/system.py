"""Domain types: systems on open boxes, smooth maps, morphisms, metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .expr import ExprAst, differentiate, parse, substitute, to_source


@dataclass(frozen=True)
class DomainSpec:
    """An open box: per-coordinate open (possibly infinite) bounds."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        if len(self.lower) != len(self.upper):
            raise ValueError("lower/upper bound lists differ in length")
        for lo, hi in zip(self.lower, self.upper):
            if not lo < hi:
                raise ValueError(f"empty interval ({lo}, {hi})")

    @property
    def dimension(self) -> int:
        return len(self.lower)

    @staticmethod
    def unbounded(dimension: int) -> "DomainSpec":
        return DomainSpec((-math.inf,) * dimension, (math.inf,) * dimension)

    def contains(self, x: Sequence[float], margin: float = 0.0) -> bool:
        for xi, lo, hi in zip(x, self.lower, self.upper):
            if math.isfinite(lo) and not xi > lo + margin:
                return False
            if math.isfinite(hi) and not xi < hi - margin:
                return False
        return True

    def boundary_distance(self, x: Sequence[float]) -> float:
        """Distance to the nearest face; negative when outside."""
        d = math.inf
        for xi, lo, hi in zip(x, self.lower, self.upper):
            if math.isfinite(lo):
                d = min(d, xi - lo)
            if math.isfinite(hi):
                d = min(d, hi - xi)
        return d

    def intersect(self, other: "DomainSpec") -> "DomainSpec":
        return DomainSpec(
            tuple(max(a, b) for a, b in zip(self.lower, other.lower)),
            tuple(min(a, b) for a, b in zip(self.upper, other.upper)))


def _parse_components(components, dimension):
    out = []
    for c in components:
        out.append(c if isinstance(c, ExprAst) else parse(c, dimension))
    for c in out:
        if c.dimension != dimension:
            raise ValueError(
                f"component dimension {c.dimension} != declared {dimension}")
    return tuple(out)


@dataclass(frozen=True)
class VectorFieldSpec:
    """An autonomous vector field on an open box in R^n."""

    name: str
    dimension: int
    components: tuple[ExprAst, ...]
    domain: DomainSpec

    def __post_init__(self):
        object.__setattr__(self, "components",
                           _parse_components(self.components, self.dimension))
        if len(self.components) != self.dimension:
            raise ValueError(
                f"{self.name}: expected {self.dimension} components, "
                f"got {len(self.components)}")
        if self.domain.dimension != self.dimension:
            raise ValueError(f"{self.name}: domain dimension mismatch")

    def __call__(self, x: Sequence[float]) -> np.ndarray:
        return np.array([c.compiled(x) for c in self.components], dtype=float)

    def to_json_dict(self) -> dict:
        return {"name": self.name, "dim": self.dimension,
                "components": [to_source(c) for c in self.components],
                "domain": _domain_to_json(self.domain)}


@dataclass(frozen=True)
class SmoothMapSpec:
    """A smooth map R^n -> R^m given componentwise, with a source domain."""

    name: str
    source_dim: int
    target_dim: int
    components: tuple[ExprAst, ...]
    domain: DomainSpec

    def __post_init__(self):
        if self.source_dim < 1 or self.target_dim < 1:
            raise ValueError("dimensions must be >= 1")
        object.__setattr__(self, "components",
                           _parse_components(self.components, self.source_dim))
        if len(self.components) != self.target_dim:
            raise ValueError(
                f"{self.name}: expected {self.target_dim} components, "
                f"got {len(self.components)}")
        if self.domain.dimension != self.source_dim:
            raise ValueError(f"{self.name}: domain dimension mismatch")
        partials = tuple(
            tuple(differentiate(c, j) for j in range(self.source_dim))
            for c in self.components)
        object.__setattr__(self, "_partials", partials)

    def __call__(self, x: Sequence[float]) -> np.ndarray:
        return np.array([c.compiled(x) for c in self.components], dtype=float)

    def to_json_dict(self) -> dict:
        return {"name": self.name, "source_dim": self.source_dim,
                "target_dim": self.target_dim,
                "components": [to_source(c) for c in self.components],
                "domain": _domain_to_json(self.domain)}

    @staticmethod
    def identity(dimension: int,
                 domain: Optional[DomainSpec] = None) -> "SmoothMapSpec":
        return SmoothMapSpec(
            "identity", dimension, dimension,
            tuple(parse(f"x{i + 1}", dimension) for i in range(dimension)),
            domain or DomainSpec.unbounded(dimension))


def compose(outer: SmoothMapSpec, inner: SmoothMapSpec) -> SmoothMapSpec:
    """Symbolic composition outer(inner(x)); domain is inner's source."""
    if inner.target_dim != outer.source_dim:
        raise ValueError("composition dimension mismatch")
    comps = tuple(substitute(c, inner.components) for c in outer.components)
    return SmoothMapSpec(f"{outer.name}.{inner.name}", inner.source_dim,
                         outer.target_dim, comps, inner.domain)


@dataclass(frozen=True)
class MorphismDecl:
    """A declared (not yet verified) map of systems source -> target."""

    map: SmoothMapSpec
    source: VectorFieldSpec
    target: VectorFieldSpec

    def __post_init__(self):
        if self.map.source_dim != self.source.dimension:
            raise ValueError("map source dimension != source system dimension")
        if self.map.target_dim != self.target.dimension:
            raise ValueError("map target dimension != target system dimension")


@dataclass(frozen=True)
class MetricSpec:
    """euclidean | weighted-euclidean | arctan-compressed.

    All three induce the standard topology on R^n; arctan-compressed is
    bounded, which makes it genuinely different from Euclidean on unbounded
    sets (that contrast is what the metric-equivalence tests exercise).
    """

    kind: str = "euclidean"
    weights: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.kind not in ("euclidean", "weighted-euclidean",
                             "arctan-compressed"):
            raise ValueError(f"unknown metric kind '{self.kind}'")
        if self.kind == "weighted-euclidean":
            if not self.weights or any(w <= 0 for w in self.weights):
                raise ValueError("weights must be strictly positive")
        elif self.weights is not None:
            raise ValueError(f"'{self.kind}' takes no weights")

    def distance(self, a, b) -> float:
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if a.shape != b.shape:
            raise ValueError("points of different dimension")
        if self.kind == "euclidean":
            return float(np.sqrt(np.sum((a - b) ** 2)))
        if self.kind == "weighted-euclidean":
            w = np.asarray(self.weights, dtype=float)
            return float(np.sqrt(np.sum(w * (a - b) ** 2)))
        return float(np.sqrt(np.sum((np.arctan(a) - np.arctan(b)) ** 2)))

    def to_json_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.weights is not None:
            d["weights"] = list(self.weights)
        return d


EUCLIDEAN = MetricSpec("euclidean")


def metric_distance(metric: MetricSpec, a, b) -> float:
    return metric.distance(a, b)


def jacobian(map: SmoothMapSpec, point: Sequence[float]) -> np.ndarray:
    """Exact symbolic Jacobian evaluated at a point (m x n)."""
    partials = map._partials  # noqa: SLF001 - built in __post_init__
    return np.array(
        [[p.compiled(point) for p in row] for row in partials], dtype=float)


def finite_difference_jacobian(map: SmoothMapSpec, point,
                               h: Optional[float] = None) -> np.ndarray:
    """Central-difference Jacobian; the independent cross-check for jacobian."""
    x = np.asarray(point, dtype=float)
    out = np.empty((map.target_dim, map.source_dim))
    for j in range(map.source_dim):
        step = h if h is not None else math.sqrt(np.finfo(float).eps) * max(
            1.0, abs(x[j]))
        xp = x.copy(); xp[j] += step
        xm = x.copy(); xm[j] -= step
        out[:, j] = (map(xp) - map(xm)) / (2 * step)
    return out


def _domain_to_json(domain: DomainSpec) -> list:
    def enc(v):
        if v == math.inf:
            return "inf"
        if v == -math.inf:
            return "-inf"
        return v
    return [[enc(lo), enc(hi)] for lo, hi in zip(domain.lower, domain.upper)]


def domain_from_json(entries) -> DomainSpec:
    def dec(v):
        if v == "inf":
            return math.inf
        if v == "-inf":
            return -math.inf
        return float(v)
    lower = tuple(dec(e[0]) for e in entries)
    upper = tuple(dec(e[1]) for e in entries)
    return DomainSpec(lower, upper)
