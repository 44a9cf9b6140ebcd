"""Prior laws for the unobservable quantity X.

Four families are supported: ``Gaussian``, ``TwoPoint`` (mass ``1 - p`` at
``-beta`` and ``p`` at ``+beta``), ``Discrete`` and ``GridDensity``. The last
three are *atomic* for the purpose of exponential tilting: a grid density is
represented by its trapezoid-rule quadrature atoms, so every moment, tilt and
sample is computed against the same weighted point set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .exceptions import DegeneratePrior

VARIANCE_FLOOR = 1e-12
WEIGHT_FLOOR = 1e-15


class PriorMeasure:
    """Common interface of all prior families."""

    kind: str = ""

    def mean(self) -> float:
        raise NotImplementedError

    def variance(self) -> float:
        raise NotImplementedError

    def support_interval(self) -> tuple[float, float]:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def to_dict(self) -> dict[str, Any]:
        raise NotImplementedError

    @property
    def is_atomic(self) -> bool:
        return False

    def atoms(self) -> tuple[np.ndarray, np.ndarray]:
        raise TypeError(f"{type(self).__name__} has no atomic representation")

    def std(self) -> float:
        return math.sqrt(self.variance())


def _check_variance(var: float) -> float:
    if not np.isfinite(var) or var <= VARIANCE_FLOOR:
        raise DegeneratePrior(f"prior variance {var!r} is not strictly positive")
    return float(var)


@dataclass(frozen=True)
class Gaussian(PriorMeasure):
    m: float = 0.0
    var: float = 1.0
    kind = "gaussian"

    def __post_init__(self):
        if not np.isfinite(self.m):
            raise ValueError("Gaussian mean must be finite")
        _check_variance(self.var)

    def mean(self):
        return float(self.m)

    def variance(self):
        return float(self.var)

    def support_interval(self):
        return (-math.inf, math.inf)

    def sample(self, rng, size=None):
        return rng.normal(self.m, math.sqrt(self.var), size=size)

    def to_dict(self):
        return {"type": "gaussian", "mean": float(self.m), "var": float(self.var)}


class _Atomic(PriorMeasure):
    """Shared logic for priors carried by finitely many weighted atoms."""

    @property
    def is_atomic(self):
        return True

    def mean(self):
        b, w = self.atoms()
        return float(np.dot(w, b))

    def variance(self):
        b, w = self.atoms()
        mu = np.dot(w, b)
        return _check_variance(float(np.dot(w, (b - mu) ** 2)))

    def support_interval(self):
        b, _ = self.atoms()
        return (float(b[0]), float(b[-1]))

    def sample(self, rng, size=None):
        b, w = self.atoms()
        # inverse-CDF on a uniform keeps the draw count fixed per call
        cdf = np.cumsum(w)
        cdf[-1] = 1.0
        idx = np.searchsorted(cdf, rng.random(size), side="right")
        out = b[np.minimum(idx, b.size - 1)]
        return float(out) if size is None else out


@dataclass(frozen=True)
class TwoPoint(_Atomic):
    p: float = 0.5
    beta: float = 1.0
    kind = "two_point"

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise DegeneratePrior(f"TwoPoint requires 0 < p < 1, got {self.p!r}")
        if not self.beta > 0.0 or not np.isfinite(self.beta):
            raise ValueError(f"TwoPoint requires beta > 0, got {self.beta!r}")

    def atoms(self):
        return (np.array([-self.beta, self.beta]), np.array([1.0 - self.p, self.p]))

    def mean(self):
        return float(self.beta * (2.0 * self.p - 1.0))

    def variance(self):
        return _check_variance(4.0 * self.beta**2 * self.p * (1.0 - self.p))

    def support_interval(self):
        return (-float(self.beta), float(self.beta))

    def to_dict(self):
        return {"type": "two_point", "p": float(self.p), "beta": float(self.beta)}


@dataclass(frozen=True, eq=False)
class Discrete(_Atomic):
    """Finitely many atoms. Duplicate locations are merged, tiny weights dropped,
    and the remaining weights renormalized to one."""

    locations: np.ndarray
    weights: np.ndarray
    kind = "discrete"

    def __post_init__(self):
        b = np.asarray(self.locations, dtype=float).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        if b.shape != w.shape or b.size == 0:
            raise ValueError("locations and weights must be non-empty and of equal length")
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(w))):
            raise ValueError("atoms must be finite")
        if np.any(w < 0):
            raise ValueError("atom weights must be nonnegative")
        keep = w >= WEIGHT_FLOOR
        b, w = b[keep], w[keep]
        uniq, inv = np.unique(b, return_inverse=True)
        merged = np.zeros(uniq.size)
        np.add.at(merged, inv, w)
        if uniq.size < 2:
            raise DegeneratePrior("a discrete prior needs at least two distinct atoms")
        merged = merged / merged.sum()
        uniq.setflags(write=False)
        merged.setflags(write=False)
        object.__setattr__(self, "locations", uniq)
        object.__setattr__(self, "weights", merged)
        self.variance()

    @classmethod
    def from_pairs(cls, pairs):
        arr = np.asarray(pairs, dtype=float)
        return cls(arr[:, 0], arr[:, 1])

    def atoms(self):
        return self.locations, self.weights

    def to_dict(self):
        return {
            "type": "discrete",
            "atoms": [[float(b), float(w)] for b, w in zip(self.locations, self.weights)],
        }


def trapezoid_weights(nodes: np.ndarray) -> np.ndarray:
    """Quadrature weights ``w`` with ``sum(w * f) == np.trapezoid(f, nodes)``."""
    h = np.diff(nodes)
    w = np.zeros_like(nodes)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w


@dataclass(frozen=True, eq=False)
class GridDensity(_Atomic):
    """A density tabulated on user-chosen nodes, normalized by the trapezoid rule."""

    nodes: np.ndarray
    density: np.ndarray
    kind = "grid_density"
    _b: np.ndarray = field(init=False, repr=False)
    _w: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        x = np.asarray(self.nodes, dtype=float).ravel()
        d = np.asarray(self.density, dtype=float).ravel()
        if x.size < 3 or x.shape != d.shape:
            raise ValueError("GridDensity needs >= 3 nodes with matching densities")
        if not np.all(np.diff(x) > 0):
            raise ValueError("GridDensity nodes must be strictly increasing")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise ValueError("densities must be finite and nonnegative")
        qw = trapezoid_weights(x)
        mass = float(np.dot(qw, d))
        if mass <= 0:
            raise DegeneratePrior("GridDensity has zero mass")
        d = d / mass
        w = qw * d
        keep = w >= WEIGHT_FLOOR
        b, w = x[keep], w[keep]
        if b.size < 2:
            raise DegeneratePrior("GridDensity mass sits on a single node")
        w = w / w.sum()
        for arr in (x, d, b, w):
            arr.setflags(write=False)
        object.__setattr__(self, "nodes", x)
        object.__setattr__(self, "density", d)
        object.__setattr__(self, "_b", b)
        object.__setattr__(self, "_w", w)
        self.variance()

    def atoms(self):
        return self._b, self._w

    def support_interval(self):
        pos = np.flatnonzero(self.density > 0)
        return (float(self.nodes[pos[0]]), float(self.nodes[pos[-1]]))

    def to_dict(self):
        return {
            "type": "grid_density",
            "nodes": self.nodes.tolist(),
            "density": self.density.tolist(),
        }


def mean(mu: PriorMeasure) -> float:
    return mu.mean()


def variance(mu: PriorMeasure) -> float:
    return mu.variance()


def support_interval(mu: PriorMeasure) -> tuple[float, float]:
    return mu.support_interval()


def sample(mu: PriorMeasure, rng: np.random.Generator, size=None):
    return mu.sample(rng, size)


def prior_from_dict(spec: dict[str, Any]) -> PriorMeasure:
    """Build a prior from its JSON form, e.g. ``{"type": "gaussian", "mean": 0, "var": 1}``."""
    kind = spec.get("type")
    if kind == "gaussian":
        return Gaussian(float(spec.get("mean", 0.0)), float(spec["var"]))
    if kind == "two_point":
        return TwoPoint(float(spec["p"]), float(spec["beta"]))
    if kind == "discrete":
        return Discrete.from_pairs(spec["atoms"])
    if kind == "grid_density":
        return GridDensity(spec["nodes"], spec["density"])
    raise ValueError(f"unknown prior type {kind!r}")


def same_prior(a: PriorMeasure, b: PriorMeasure) -> bool:
    return a.to_dict() == b.to_dict()
