"""Gaussian expectation rules and the one-level smoothing operator.

``smooth`` maps a function ``F`` on a grid to

    G(x) = (1/m) log E exp(m F(x + s z)),      z ~ N(0, 1),

(or ``E F(x + s z)`` when ``m == 0``), which is one step of the Parisi
recursion.  Gauss-Hermite rules are exact for polynomials but converge slowly
when ``F`` bends on a length scale much shorter than ``s``; for those levels
``gaussian_rule`` switches to a normalized trapezoid rule whose error decays
like ``exp(-pi**2 / (scale * spacing))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import logsumexp

M_ZERO = 1e-8


@dataclass(frozen=True)
class GaussianRule:
    """Nodes and weights for expectations against the standard normal."""

    nodes: np.ndarray
    weights: np.ndarray
    kind: str = "hermite"

    def __len__(self):
        return len(self.nodes)

    @property
    def log_weights(self) -> np.ndarray:
        return np.log(self.weights)

    def expect(self, fn: Callable[[np.ndarray], np.ndarray], std: float = 1.0) -> float:
        return float(np.dot(self.weights, fn(std * self.nodes)))


GaussHermiteRule = GaussianRule


@lru_cache(maxsize=64)
def gauss_hermite(n: int) -> GaussianRule:
    """Gauss-Hermite rule with ``n`` nodes for the standard normal."""
    if not 1 <= n <= 512:
        raise ValueError(f"Gauss-Hermite order {n} outside [1, 512]")
    if n == 1:
        return GaussianRule(np.zeros(1), np.ones(1))
    x, w = np.polynomial.hermite_e.hermegauss(n)
    # symmetrize to kill roundoff asymmetry from the eigen-solver
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    w = w / w.sum()
    x.setflags(write=False)
    w.setflags(write=False)
    return GaussianRule(x, w)


@lru_cache(maxsize=256)
def trapezoid_rule(spacing: float, span: float) -> GaussianRule:
    """Uniform nodes ``j*spacing`` on ``[-span, span]`` with normalized Gaussian weights."""
    half = int(math.ceil(span / spacing))
    z = np.arange(-half, half + 1) * spacing
    w = np.exp(-0.5 * z * z)
    w /= w.sum()
    z.setflags(write=False)
    w.setflags(write=False)
    return GaussianRule(z, w, kind="trapezoid")


@dataclass(frozen=True)
class RuleConfig:
    """How to pick a Gaussian rule for a level of a given scale.

    ``scale`` is (standard deviation) x (largest |sigma|): the width of the
    Gaussian measured in units of the kink width of a log-partition function.
    """

    order: int = 40
    hermite_max_scale: float = 0.5
    spacing: float = 0.3
    span: float = 9.0
    refinement: int = 0

    def refined(self) -> RuleConfig:
        return RuleConfig(self.order, self.hermite_max_scale, self.spacing, self.span,
                          self.refinement + 1)


def gaussian_rule(scale: float, config: RuleConfig | None = None) -> GaussianRule:
    """Pick an accurate rule for ``E g(s z)`` where ``g`` varies on scale ``1/sigma_max``."""
    config = config or RuleConfig()
    factor = 2**config.refinement
    if scale <= config.hermite_max_scale:
        return gauss_hermite(min(512, config.order * factor))
    spacing = min(0.5, config.spacing / scale) / factor
    return trapezoid_rule(spacing, config.span + scale)


@dataclass
class GridFunction:
    """Function sampled on a uniform grid.

    Cubic spline inside ``[x_min, x_max]`` (linear in the sampled values),
    linear extrapolation with the boundary slope outside.
    """

    x_min: float
    x_max: float
    values: np.ndarray
    order: str = "cubic"
    _spline: CubicSpline | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or len(self.values) < 4:
            raise ValueError("grid function needs at least 4 samples")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function values must be finite")
        if not self.x_max > self.x_min:
            raise ValueError("empty grid interval")

    @classmethod
    def from_callable(cls, fn, x_min: float, x_max: float, points: int = 2049) -> GridFunction:
        x = np.linspace(x_min, x_max, points)
        return cls(x_min, x_max, np.asarray(fn(x), dtype=float))

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, len(self.values))

    @property
    def spline(self) -> CubicSpline:
        if self._spline is None:
            self._spline = CubicSpline(self.x, self.values, bc_type="not-a-knot")
        return self._spline

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        sp = self.spline
        out = sp(np.clip(x, self.x_min, self.x_max))
        lo = x < self.x_min
        hi = x > self.x_max
        if np.any(lo):
            out[lo] = self.values[0] + sp(self.x_min, 1) * (x[lo] - self.x_min)
        if np.any(hi):
            out[hi] = self.values[-1] + sp(self.x_max, 1) * (x[hi] - self.x_max)
        return out

    def with_values(self, values) -> GridFunction:
        return GridFunction(self.x_min, self.x_max, values, self.order)


def soft_average(y: np.ndarray, weights: np.ndarray, m: float) -> np.ndarray:
    """``(1/m) log sum_j w_j exp(m y_j)`` along the last axis, stable for small ``m``.

    Rows whose centred exponents stay below 1 in magnitude go through
    ``log1p``/``expm1``, which keeps full relative accuracy in the ``O(m)``
    correction to the plain mean; other rows use log-sum-exp.
    """
    mean = y @ weights
    a = m * (y - mean[..., None])
    spread = np.max(np.abs(a), axis=-1)
    near = np.log1p(np.expm1(np.clip(a, -1.0, 1.0)) @ weights) / m + mean
    if np.all(spread <= 1.0):
        return near
    far = logsumexp(m * y, b=weights, axis=-1) / m
    return np.where(spread <= 1.0, near, far)


def smooth_points(fn: Callable[[np.ndarray], np.ndarray], x, variance: float, m: float,
                  rule: GaussianRule) -> np.ndarray:
    """Evaluate ``(1/m) log E exp(m fn(x + s z))`` at the points ``x``."""
    x = np.asarray(x, dtype=float)
    if variance <= 0.0:
        return np.asarray(fn(x), dtype=float)
    s = math.sqrt(variance)
    y = fn((x[..., None] + s * rule.nodes).reshape(-1)).reshape(x.shape + (len(rule),))
    if m < M_ZERO:
        return y @ rule.weights
    return soft_average(y, rule.weights, m)


def smooth(F: GridFunction, variance: float, m: float, rule: GaussianRule | None = None) -> GridFunction:
    """One level of the Parisi recursion, evaluated on the grid of ``F``.

    Args:
        F: input function of the running Gaussian field.
        variance: variance of the Gaussian increment (0 returns ``F`` unchanged).
        m: exponent in [0, 1]; values below ``1e-8`` use the plain average.
        rule: Gaussian rule; chosen from the grid slope scale when omitted.
    """
    if variance < 0:
        raise ValueError("variance must be nonnegative")
    if variance == 0.0:
        return F.with_values(F.values.copy())
    if rule is None:
        slope = float(np.max(np.abs(np.diff(F.values)))) / (F.x[1] - F.x[0])
        rule = gaussian_rule(math.sqrt(variance) * max(slope, 1e-12))
    return F.with_values(smooth_points(F, F.x, variance, m, rule))
