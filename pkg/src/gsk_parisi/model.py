"""Spin priors and mixture (covariance) functions.

A prior is a finite positive measure on a bounded set of real spins.  Atoms
are stored exactly; a continuous part is discretized once, at construction,
by Gauss-Legendre nodes and from then on behaves like extra atoms.  The
support bounds ``d`` and ``D`` of ``sigma**2`` are always taken from the
exact support (atom locations and density endpoints), never from nodes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Mapping

import numpy as np


class ModelError(ValueError):
    """Invalid prior or mixture specification."""


@dataclass(frozen=True)
class UniformDensity:
    """Uniform density on ``[a, b]`` with total mass ``mass``."""

    a: float
    b: float
    nodes: int = 64
    mass: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)) or self.b <= self.a:
            raise ModelError(f"density interval [{self.a}, {self.b}] is empty or unbounded")
        if self.nodes < 1:
            raise ModelError("density needs at least one quadrature node")
        if not self.mass > 0:
            raise ModelError("density mass must be positive")

    def discretize(self) -> tuple[np.ndarray, np.ndarray]:
        x, w = np.polynomial.legendre.leggauss(self.nodes)
        half = 0.5 * (self.b - self.a)
        sigma = self.a + half * (x + 1.0)
        return sigma, w * 0.5 * self.mass

    def support_sq(self) -> tuple[float, float]:
        lo, hi = sorted((self.a * self.a, self.b * self.b))
        if self.a <= 0.0 <= self.b:
            lo = 0.0
        return lo, hi

    def to_dict(self) -> dict:
        return {"kind": "uniform", "a": self.a, "b": self.b, "nodes": self.nodes, "mass": self.mass}


@dataclass(frozen=True)
class PriorMeasure:
    """Finite positive measure on a bounded spin set.

    Attributes:
        atoms: tuple of ``(sigma, weight)`` pairs with positive weights.
        density: optional continuous part.
    """

    atoms: tuple[tuple[float, float], ...] = ()
    density: UniformDensity | None = None

    def __post_init__(self):
        atoms = tuple((float(s), float(w)) for s, w in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        if not atoms and self.density is None:
            raise ModelError("empty measure")
        for s, w in atoms:
            if not math.isfinite(s):
                raise ModelError("spin values must be finite")
            if not (w > 0 and math.isfinite(w)):
                raise ModelError(f"atom weight {w} at sigma={s} is not strictly positive")

    # -- constructors -------------------------------------------------------

    @classmethod
    def ising(cls, h: float = 0.0) -> PriorMeasure:
        """Counting measure on {-1, +1} tilted by an external field ``h*sigma``."""
        return cls(atoms=((-1.0, math.exp(-h)), (1.0, math.exp(h))))

    @classmethod
    def ghatak_sherrington(cls, h: float = 0.0, spin: int = 1) -> PriorMeasure:
        """Counting measure on {0, +-1, ..., +-spin} tilted by ``h*sigma**2``."""
        if spin < 1:
            raise ModelError("spin must be a positive integer")
        values = range(-spin, spin + 1)
        return cls(atoms=tuple((float(s), math.exp(h * s * s)) for s in values))

    @classmethod
    def uniform(cls, a: float, b: float, nodes: int = 64, mass: float = 1.0) -> PriorMeasure:
        return cls(density=UniformDensity(a, b, nodes, mass))

    # -- derived quantities -------------------------------------------------

    @cached_property
    def sigma(self) -> np.ndarray:
        """Spin values of the discretized measure (atoms first)."""
        parts = [np.array([s for s, _ in self.atoms], dtype=float)]
        if self.density is not None:
            parts.append(self.density.discretize()[0])
        return np.concatenate(parts)

    @cached_property
    def weights(self) -> np.ndarray:
        parts = [np.array([w for _, w in self.atoms], dtype=float)]
        if self.density is not None:
            parts.append(self.density.discretize()[1])
        return np.concatenate(parts)

    @cached_property
    def log_weights(self) -> np.ndarray:
        return np.log(self.weights)

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.weights))

    @property
    def sigma_max(self) -> float:
        return math.sqrt(self.support_bounds()[1])

    def support_bounds(self) -> tuple[float, float]:
        return support_bounds(self)

    def atom_mass_at_square(self, u: float, tol: float = 0.0) -> float:
        """Mass of the atoms with ``sigma**2 == u`` (density parts carry none)."""
        return sum(w for s, w in self.atoms if abs(s * s - u) <= tol)

    def restricted_to_square(self, u: float, tol: float = 0.0) -> PriorMeasure | None:
        """Restriction to the atoms with ``sigma**2 == u``; ``None`` if that set is null."""
        atoms = tuple((s, w) for s, w in self.atoms if abs(s * s - u) <= tol)
        return PriorMeasure(atoms=atoms) if atoms else None

    def tilted(self, field_fn: Callable[[float], float]) -> PriorMeasure:
        """Change of measure ``d nu' = exp(h(sigma)) d nu`` (atoms only)."""
        if self.density is not None:
            raise ModelError("tilting a continuous part is not supported")
        return PriorMeasure(atoms=tuple((s, w * math.exp(field_fn(s))) for s, w in self.atoms))

    def scaled(self, c: float) -> PriorMeasure:
        if not c > 0:
            raise ModelError("scale must be positive")
        dens = None
        if self.density is not None:
            d = self.density
            dens = UniformDensity(d.a, d.b, d.nodes, d.mass * c)
        return PriorMeasure(atoms=tuple((s, w * c) for s, w in self.atoms), density=dens)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"atoms": [{"sigma": s, "weight": w} for s, w in self.atoms]}
        if self.density is not None:
            out["density"] = self.density.to_dict()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> PriorMeasure:
        unknown = set(data) - {"atoms", "density"}
        if unknown:
            raise ModelError(f"unknown prior keys: {sorted(unknown)}")
        atoms = []
        for entry in data.get("atoms", []):
            if set(entry) - {"sigma", "weight"}:
                raise ModelError(f"unknown atom keys: {sorted(set(entry) - {'sigma', 'weight'})}")
            atoms.append((float(entry["sigma"]), float(entry.get("weight", 1.0))))
        density = None
        if data.get("density") is not None:
            d = dict(data["density"])
            kind = d.pop("kind", "uniform")
            if kind != "uniform":
                raise ModelError(f"unsupported density kind {kind!r}")
            if set(d) - {"a", "b", "nodes", "mass"}:
                raise ModelError(f"unknown density keys: {sorted(set(d) - {'a', 'b', 'nodes', 'mass'})}")
            density = UniformDensity(float(d["a"]), float(d["b"]), int(d.get("nodes", 64)),
                                     float(d.get("mass", 1.0)))
        return cls(atoms=tuple(atoms), density=density)

    @classmethod
    def from_json(cls, text: str) -> PriorMeasure:
        return cls.from_dict(json.loads(text))


def support_bounds(prior: PriorMeasure) -> tuple[float, float]:
    """Return ``(d, D)``, the extreme values of ``sigma**2`` on the support."""
    lows, highs = [], []
    if prior.atoms:
        sq = [s * s for s, _ in prior.atoms]
        lows.append(min(sq))
        highs.append(max(sq))
    if prior.density is not None:
        lo, hi = prior.density.support_sq()
        lows.append(lo)
        highs.append(hi)
    if not lows:
        raise ModelError("empty measure")
    return min(lows), max(highs)


@dataclass(frozen=True)
class MixtureXi:
    """Even covariance polynomial ``xi(x) = sum_p a_p^2 x^p``.

    ``coefficients`` maps each even power ``p >= 2`` to the squared amplitude
    ``a_p^2``.  An all-zero mixture (no disorder) is allowed.
    """

    coefficients: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        coeffs = {}
        for p, c in dict(self.coefficients).items():
            p = int(p)
            c = float(c)
            if p < 1:
                raise ModelError(f"power {p} must be positive")
            if p % 2:
                raise ModelError(f"odd power {p} is not allowed; the mixture must be even")
            if not math.isfinite(c):
                raise ModelError("mixture coefficients must be finite")
            if c != 0.0:
                coeffs[p] = c
        object.__setattr__(self, "coefficients", dict(sorted(coeffs.items())))

    @classmethod
    def sk(cls, beta: float) -> MixtureXi:
        """Pair interaction ``beta/sqrt(N) sum_{i<j} g_ij s_i s_j``: ``xi = beta^2 x^2 / 2``."""
        return cls({2: 0.5 * beta * beta})

    @property
    def is_zero(self) -> bool:
        return not self.coefficients

    def xi(self, x):
        x = np.asarray(x, dtype=float)
        return sum((c * x**p for p, c in self.coefficients.items()), np.zeros_like(x))

    def dxi(self, x):
        x = np.asarray(x, dtype=float)
        return sum((c * p * x ** (p - 1) for p, c in self.coefficients.items()), np.zeros_like(x))

    def ddxi(self, x):
        x = np.asarray(x, dtype=float)
        return sum((c * p * (p - 1) * x ** (p - 2) for p, c in self.coefficients.items()),
                   np.zeros_like(x))

    def theta(self, q):
        """``q xi'(q) - xi(q)`` summed termwise as ``a_p^2 (p-1) q^p``."""
        q = np.asarray(q, dtype=float)
        return sum((c * (p - 1) * q**p for p, c in self.coefficients.items()), np.zeros_like(q))

    def validate(self, D: float, points: int = 257) -> None:
        """Check ``xi'' > 0`` on ``(0, D]``; raise :class:`ModelError` otherwise."""
        if self.is_zero or D <= 0:
            return
        x = np.linspace(0.0, D, points)[1:]
        if np.any(self.ddxi(x) <= 0):
            raise ModelError("xi'' must be positive on (0, D]")

    def to_dict(self) -> dict:
        return {f"a{p}_sq": c for p, c in self.coefficients.items()}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> MixtureXi:
        if "beta_sk" in data:
            if len(data) != 1:
                raise ModelError("'beta_sk' cannot be combined with explicit coefficients")
            return cls.sk(float(data["beta_sk"]))
        coeffs = {}
        for key, val in data.items():
            if not (key.startswith("a") and key.endswith("_sq") and key[1:-3].isdigit()):
                raise ModelError(f"unknown mixture key {key!r}")
            coeffs[int(key[1:-3])] = float(val)
        return cls(coeffs)


def theta(xi: MixtureXi, q):
    """``theta(q) = q xi'(q) - xi(q)``."""
    return xi.theta(q)
