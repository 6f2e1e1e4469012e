"""The Parisi functional for a spin prior and its lambda-derivatives.

Levels ``p = 0..k`` carry Gaussian increments ``z_p`` of variance
``xi'(q_{p+1}) - xi'(q_p)`` and exponents ``m_p``.  The terminal function is

    X_{k+1}(x) = log sum_sigma w(sigma) exp(sigma x + lambda sigma^2),

and ``X_p = (1/m_p) log E_p exp(m_p X_{p+1})``.  Because ``m_k = 1`` the top
level is integrated in closed form: ``X_k(x)`` is the same log-partition with
``lambda`` shifted by half the top variance.  The remaining levels are either
composed directly (tensor product of rule nodes, when that is small) or
tabulated on uniform grids.

Along with every value the recursion carries the first two lambda-derivatives,
propagated with the weights ``W_p = exp(m_p (X_{p+1} - X_p))``.  Interpolation
is linear in the tabulated samples, so the propagated derivative is the exact
derivative of the discrete map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .model import MixtureXi, PriorMeasure
from .quadrature import M_ZERO, GaussianRule, GridFunction, RuleConfig, gaussian_rule, soft_average

Triple = tuple[np.ndarray, np.ndarray, np.ndarray]

_CHUNK = 2_000_000


class ParameterError(ValueError):
    """Order parameters violate the monotonicity constraints."""


@dataclass(frozen=True)
class Numerics:
    """Discretization settings for the Parisi recursion."""

    rules: RuleConfig = RuleConfig()
    grid_points: int = 2049
    grid_span: float = 10.0
    grid_spacing: float = 0.05
    max_grid_points: int = 16385
    tensor_budget: int = 300_000
    method: str = "auto"
    adaptive: bool = True
    adaptive_tol: float = 1e-9
    max_refinements: int = 3
    skip_variance: float = 1e-14

    def replace(self, **kw) -> Numerics:
        vals = {f: getattr(self, f) for f in self.__dataclass_fields__}
        vals.update(kw)
        return Numerics(**vals)


DEFAULT_NUMERICS = Numerics()
FAST_NUMERICS = Numerics(adaptive=False)


@dataclass(frozen=True)
class RSBParams:
    """Order parameters ``m_0..m_k``, ``q_0..q_{k+1}``, multiplier ``lam`` and ``u``."""

    m: tuple[float, ...]
    q: tuple[float, ...]
    lam: float
    u: float

    def __post_init__(self):
        m = tuple(float(v) for v in self.m)
        q = tuple(float(v) for v in self.q)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "u", float(self.u))
        if len(m) < 2 or len(q) != len(m) + 1:
            raise ParameterError("need m_0..m_k and q_0..q_{k+1} with k >= 1")
        if m[0] != 0.0 or m[-1] != 1.0:
            raise ParameterError("m must start at 0 and end at 1")
        if any(b < a for a, b in zip(m, m[1:])):
            raise ParameterError("m must be nondecreasing")
        if q[0] != 0.0 or q[-1] != self.u:
            raise ParameterError("q must start at 0 and end at u")
        if any(b < a for a, b in zip(q, q[1:])):
            raise ParameterError("q must be nondecreasing")
        if not math.isfinite(self.lam):
            raise ParameterError("lambda must be finite")

    @property
    def k(self) -> int:
        return len(self.m) - 1

    @classmethod
    def replica_symmetric(cls, q: float, lam: float, u: float) -> RSBParams:
        return cls((0.0, 1.0), (0.0, q, u), lam, u)

    def with_lambda(self, lam: float) -> RSBParams:
        return RSBParams(self.m, self.q, lam, self.u)

    def variances(self, xi: MixtureXi) -> np.ndarray:
        dq = xi.dxi(np.array(self.q))
        return np.maximum(np.diff(dq), 0.0)

    def order_parameter(self, x) -> np.ndarray:
        """Step function ``m(x) = m_l`` on ``[q_l, q_{l+1})``, 1 beyond ``u``."""
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(np.array(self.q[1:]), x, side="right")
        m_ext = np.array(self.m + (1.0,))
        return m_ext[np.minimum(idx, len(self.m))]


def order_parameter_distance(a: RSBParams, b: RSBParams, D: float) -> float:
    """``int_0^D |m_a(x) - m_b(x)| dx`` for the two step functions (exact)."""
    cuts = sorted({0.0, D, *a.q, *b.q})
    cuts = [c for c in cuts if 0.0 <= c <= D]
    mids = 0.5 * (np.array(cuts[:-1]) + np.array(cuts[1:]))
    return float(np.sum(np.abs(a.order_parameter(mids) - b.order_parameter(mids)) * np.diff(cuts)))


@dataclass
class ParisiEvaluation:
    """Result of one Parisi recursion.

    ``levels`` holds the tabulated ``X_{k+1}, ..., X_1`` when the grid method
    ran (it is empty for direct tensor composition).
    """

    x0: float
    dx0_dlambda: float
    d2x0_dlambda2: float
    levels: list[GridFunction] = field(default_factory=list)
    derivative_levels: list[GridFunction] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)


def log_partition(prior: PriorMeasure, x, lam: float) -> Triple:
    """``log sum w exp(sigma x + lam sigma^2)`` with Gibbs mean and variance of ``sigma^2``."""
    x = np.asarray(x, dtype=float)
    s = prior.sigma
    s2 = s * s
    a = prior.log_weights + x[..., None] * s + lam * s2
    lz = logsumexp(a, axis=-1)
    p = np.exp(a - lz[..., None])
    mean = p @ s2
    var = p @ (s2 * s2) - mean * mean
    np.maximum(var, 0.0, out=var)
    return lz, mean, var


def gibbs_moments(prior: PriorMeasure, x, lam: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(log Z, <sigma>, <sigma^2>)`` of the single-site tilted measure."""
    x = np.asarray(x, dtype=float)
    s = prior.sigma
    a = prior.log_weights + x[..., None] * s + lam * s * s
    lz = logsumexp(a, axis=-1)
    p = np.exp(a - lz[..., None])
    return lz, p @ s, p @ (s * s)


def terminal_function(prior: PriorMeasure, lam: float, grid: tuple[float, float, int] | None = None) -> GridFunction:
    """Tabulate ``X_{k+1}(x) = log sum w exp(sigma x + lam sigma^2)``."""
    if grid is None:
        r = 10.0 * max(prior.sigma_max, 1.0)
        grid = (-r, r, 2049)
    x_min, x_max, n = grid
    x = np.linspace(x_min, x_max, n)
    return GridFunction(x_min, x_max, log_partition(prior, x, lam)[0])


# -- recursion engine --------------------------------------------------------


def _smooth_triple(fn: Callable[[np.ndarray], Triple], x: np.ndarray, variance: float, m: float,
                   rule: GaussianRule) -> Triple:
    k = len(rule)
    rows = max(1, _CHUNK // max(k, 1))
    if len(x) > rows:
        parts = [_smooth_triple(fn, x[i:i + rows], variance, m, rule) for i in range(0, len(x), rows)]
        return tuple(np.concatenate([p[j] for p in parts]) for j in range(3))
    s = math.sqrt(variance)
    y = (x[:, None] + s * rule.nodes).reshape(-1)
    v, d1, d2 = (np.asarray(a).reshape(len(x), k) for a in fn(y))
    w = rule.weights
    if m < M_ZERO:
        return v @ w, d1 @ w, d2 @ w
    val = soft_average(v, w, m)
    wt = w * np.exp(m * (v - val[:, None]))
    g1 = np.sum(wt * d1, axis=1)
    g2 = np.sum(wt * (d2 + m * d1 * d1), axis=1) - m * g1 * g1
    return val, g1, g2


class _Tabulated:
    def __init__(self, x_min, x_max, triple: Triple):
        self.parts = [GridFunction(x_min, x_max, a) for a in triple]

    def __call__(self, y):
        return tuple(p(y) for p in self.parts)


@dataclass(frozen=True)
class _Level:
    variance: float
    m: float
    rule: GaussianRule
    field_variance: float


def _grid_for(level: _Level, numerics: Numerics, sigma_max: float) -> tuple[float, float, int]:
    r = numerics.grid_span * math.sqrt(level.field_variance) + 2.0 / max(sigma_max, 1e-3)
    n = int(math.ceil(2.0 * r * max(sigma_max, 1e-3) / numerics.grid_spacing)) + 1
    n = min(max(n, numerics.grid_points), numerics.max_grid_points)
    return -r, r, n


def _run(top: Callable[[np.ndarray], Triple], levels: list[_Level], numerics: Numerics,
         sigma_max: float, atoms: int) -> ParisiEvaluation:
    cost = atoms * math.prod(len(lv.rule) for lv in levels)
    method = numerics.method
    if method == "auto":
        method = "tensor" if cost <= numerics.tensor_budget else "grid"
    diag = {"method": method, "rule_sizes": [len(lv.rule) for lv in levels],
            "rule_kinds": [lv.rule.kind for lv in levels]}
    fn = top
    tabs: list[_Tabulated] = []
    if method == "tensor":
        for lv in reversed(levels):
            fn = (lambda f, lv: lambda y: _smooth_triple(f, y, lv.variance, lv.m, lv.rule))(fn, lv)
    elif method == "grid":
        for lv in reversed(levels[1:]):
            x_min, x_max, n = _grid_for(lv, numerics, sigma_max)
            xs = np.linspace(x_min, x_max, n)
            fn = _Tabulated(x_min, x_max, _smooth_triple(fn, xs, lv.variance, lv.m, lv.rule))
            tabs.append(fn)
        if levels:
            lv = levels[0]
            fn = (lambda f, lv: lambda y: _smooth_triple(f, y, lv.variance, lv.m, lv.rule))(fn, lv)
        diag["grid_points"] = [len(t.parts[0].values) for t in tabs]
    else:
        raise ValueError(f"unknown method {method!r}")
    v, d1, d2 = fn(np.zeros(1))
    res = ParisiEvaluation(float(v[0]), float(d1[0]), float(d2[0]), diagnostics=diag)
    res.levels = [t.parts[0] for t in tabs]
    res.derivative_levels = [t.parts[1] for t in tabs]
    return res


def _levels(variances: Sequence[float], m: Sequence[float], numerics: Numerics, sigma_max: float,
            rules: RuleConfig) -> list[_Level]:
    out = []
    below = 0.0
    for v, mp in zip(variances, m):
        if v >= numerics.skip_variance:
            rule = gaussian_rule(math.sqrt(v) * sigma_max, rules)
            out.append(_Level(float(v), float(mp), rule, below))
        below += max(v, 0.0)
    return out


def _evaluate_prior(prior: PriorMeasure, xi: MixtureXi, params: RSBParams, numerics: Numerics,
                    rules: RuleConfig) -> ParisiEvaluation:
    var = params.variances(xi)
    lam_top = params.lam + 0.5 * var[-1]

    def top(y):
        return log_partition(prior, y, lam_top)

    levels = _levels(var[:-1], params.m[:-1], numerics, prior.sigma_max, rules)
    res = _run(top, levels, numerics, prior.sigma_max, len(prior.sigma))
    if res.levels:
        # report X_{k+1} and X_k on the grid of the highest tabulated level
        g = res.levels[0]
        terminal = log_partition(prior, g.x, params.lam)
        folded = top(g.x)
        res.levels = [g.with_values(terminal[0]), g.with_values(folded[0])] + res.levels
        res.derivative_levels = [g.with_values(terminal[1]), g.with_values(folded[1])] + res.derivative_levels
    return res


def parisi_value(prior: PriorMeasure, xi: MixtureXi, params: RSBParams,
                 numerics: Numerics | None = None) -> ParisiEvaluation:
    """Run the recursion down to ``X_0`` (with its lambda-derivatives).

    With ``numerics.adaptive`` the Gaussian rules are refined (Hermite order
    doubled, trapezoid spacing halved) until two successive values of ``X_0``
    agree to ``adaptive_tol``.
    """
    numerics = numerics or DEFAULT_NUMERICS
    d, D = prior.support_bounds()
    if not (d - 1e-12 <= params.u <= D + 1e-12):
        raise ParameterError(f"u={params.u} outside [{d}, {D}]")
    rules = numerics.rules
    res = _evaluate_prior(prior, xi, params, numerics, rules)
    refinements = 0
    change = float("nan")
    if numerics.adaptive:
        while refinements < numerics.max_refinements:
            rules = rules.refined()
            nxt = _evaluate_prior(prior, xi, params, numerics, rules)
            refinements += 1
            change = abs(nxt.x0 - res.x0)
            res = nxt
            if change <= numerics.adaptive_tol:
                break
        res.diagnostics["refinements"] = refinements
        res.diagnostics["last_change"] = change
    if not math.isfinite(res.x0):
        raise FloatingPointError("X_0 is not finite")
    return res


def lambda_derivative(prior: PriorMeasure, xi: MixtureXi, params: RSBParams,
                      numerics: Numerics | None = None) -> float:
    """``dX_0/dlambda = E W_1...W_k <sigma^2>``; lies in ``[d, D]``."""
    return parisi_value(prior, xi, params, numerics).dx0_dlambda


def lower_bound_check(prior: PriorMeasure, xi: MixtureXi, params: RSBParams,
                      numerics: Numerics | None = None) -> float:
    """``X_0 - log int exp(lambda sigma^2) dnu``; nonnegative up to discretization error."""
    x0 = parisi_value(prior, xi, params, numerics).x0
    floor = float(logsumexp(prior.log_weights + params.lam * prior.sigma**2))
    return x0 - floor


def parisi_functional(F: Callable[[np.ndarray], np.ndarray], variances: Sequence[float], m: Sequence[float],
                      G: Callable[[np.ndarray], np.ndarray] | None = None, *, slope_scale: float = 1.0,
                      numerics: Numerics | None = None) -> ParisiEvaluation:
    """Generic operator ``P(m) F`` for a function of the summed Gaussian field.

    ``dx0_dlambda`` of the result is the weighted average
    ``E_0 W_0...W_k G`` (``G`` defaults to 1), and ``derivative_levels`` hold
    ``E_l W_l...W_k G`` on the grids when the grid method is used.
    ``slope_scale`` is the inverse length on which ``F`` bends; it sets the
    Gaussian rules.
    """
    numerics = numerics or DEFAULT_NUMERICS.replace(adaptive=False)

    def top(y):
        v = np.asarray(F(y), dtype=float)
        g = np.ones_like(v) if G is None else np.asarray(G(y), dtype=float)
        return v, g, np.zeros_like(v)

    levels = _levels(variances, m, numerics, slope_scale, numerics.rules)
    return _run(top, levels, numerics, slope_scale, 1)
