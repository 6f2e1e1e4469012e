"""Randomized invariant checks of the Parisi functional.

Each check draws random instances (``k <= 3`` levels, smooth convex test
functions ``F``) and records the worst violation.  A direct tensor-product
evaluator of the nested expectations, independent of the tabulating engine,
serves as the oracle for the two-copy doubling identity and for the
weighted-average inequality, whose intermediate weights it exposes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .model import MixtureXi, PriorMeasure
from .parisi_core import DEFAULT_NUMERICS, RSBParams, parisi_functional, parisi_value
from .quadrature import M_ZERO, gauss_hermite


@dataclass(frozen=True)
class TestFunction:
    """``F(x) = a log cosh(b x + c) + d x``: smooth, convex, Lipschitz."""

    a: float
    b: float
    c: float
    d: float

    def __call__(self, x):
        y = self.b * np.asarray(x, dtype=float) + self.c
        ay = np.abs(y)
        return self.a * (ay + np.log1p(np.exp(-2.0 * ay)) - math.log(2.0)) + self.d * np.asarray(x)

    @property
    def slope_scale(self) -> float:
        return max(self.b, 1e-3)


def random_function(rng: np.random.Generator) -> TestFunction:
    return TestFunction(rng.uniform(0.3, 1.5), rng.uniform(0.5, 1.5), rng.uniform(-1, 1), rng.uniform(-0.5, 0.5))


def random_levels(rng: np.random.Generator, k: int, m0_zero: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Variances and a nondecreasing exponent vector for ``k + 1`` levels."""
    var = rng.uniform(0.05, 0.5, size=k + 1)
    m = np.sort(rng.uniform(0.05, 1.0, size=k + 1))
    if m0_zero:
        m[0] = 0.0
    return var, m


def direct_functional(F, variances, m, order: int = 32) -> float:
    """``P(m) F`` at field 0 by explicit composition of Gauss-Hermite nodes."""
    rule = gauss_hermite(order)

    def rec(level, x):
        if level == len(variances):
            return F(x)
        s = math.sqrt(variances[level])
        y = rec(level + 1, x[..., None] + s * rule.nodes)
        if m[level] < M_ZERO:
            return y @ rule.weights
        return logsumexp(m[level] * y, b=rule.weights, axis=-1) / m[level]

    return float(rec(0, np.zeros(())))


def direct_two_copy(F, variances, n, r: int, order: int | None = None) -> float:
    """``P(n)(F(x^1) + F(x^2))`` where levels below ``r`` are shared and the rest independent.

    Without an explicit ``order`` the largest node count (at most 32) keeping the
    tensor below about four million entries is used.
    """
    if order is None:
        dims = r + 2 * (len(variances) - r)
        order = min(32, int((4e6) ** (1.0 / dims)))
    rule = gauss_hermite(order)
    w2 = np.outer(rule.weights, rule.weights).ravel()

    def rec(level, x1, x2):
        if level == len(variances):
            return F(x1) + F(x2)
        s = math.sqrt(variances[level])
        z = s * rule.nodes
        if level < r:
            y = rec(level + 1, x1[..., None] + z, x2[..., None] + z)
            w = rule.weights
        else:
            a = np.broadcast_to(x1[..., None, None] + z[:, None], x1.shape + (len(z), len(z)))
            b = np.broadcast_to(x2[..., None, None] + z[None, :], x2.shape + (len(z), len(z)))
            y = rec(level + 1, a.reshape(x1.shape + (-1,)), b.reshape(x2.shape + (-1,)))
            w = w2
        if n[level] < M_ZERO:
            return y @ w
        return logsumexp(n[level] * y, b=w, axis=-1) / n[level]

    return float(rec(0, np.zeros(()), np.zeros(())))


def weighted_log_average(f, F, variances, m, order: int = 16) -> tuple[float, float, float]:
    """``(E_0 log E_r W_r...W_k exp(m_k (f - F)), P(m) f, P(m) F)`` by direct composition.

    ``r`` is the first level with a nonzero exponent; levels below it are plain averages.
    """
    rule = gauss_hermite(order)
    k1 = len(variances)
    r = next(i for i, mv in enumerate(m) if mv >= M_ZERO)

    def rec(level, x):
        """Return ``(F_l, f_l, A_l, L_l)`` with ``A_l = E_l W_l...W_k U`` and ``L_l`` the log part."""
        if level == k1:
            Fx, fx = F(x), f(x)
            return Fx, fx, np.exp(m[-1] * (fx - Fx)), None
        s = math.sqrt(variances[level])
        Fy, fy, Ay, Ly = rec(level + 1, x[..., None] + s * rule.nodes)
        w, ml = rule.weights, m[level]
        if ml < M_ZERO:
            Fl, fl = Fy @ w, fy @ w
            Wl = np.ones_like(Fy)
        else:
            Fl = logsumexp(ml * Fy, b=w, axis=-1) / ml
            fl = logsumexp(ml * fy, b=w, axis=-1) / ml
            Wl = np.exp(ml * (Fy - Fl[..., None]))
        Al = (Wl * Ay) @ w
        if level == r:
            Ll = np.log(Al)
        elif level < r:
            Ll = Ly @ w
        else:
            Ll = None
        return Fl, fl, Al, Ll

    F0, f0, _, L0 = rec(0, np.zeros(()))
    return float(L0), float(f0), float(F0)


def _record(results, name, worst, tol, trials, direction="abs"):
    passed = worst <= tol
    results[name] = {"passed": bool(passed), "worst": float(worst), "tolerance": tol, "trials": trials,
                     "measure": direction}


def run_checks(trials: int = 100, seed: int = 0) -> dict[str, dict]:
    """Run every invariant ``trials`` times; returns ``name -> {passed, worst, tolerance, ...}``."""
    rng = np.random.default_rng(seed)
    numerics = DEFAULT_NUMERICS.replace(adaptive=False)
    grid_numerics = numerics.replace(method="grid")
    worst = {key: 0.0 for key in ("shift", "monotone", "jensen", "collapse", "doubling", "weighted_average",
                                  "normalization", "engine_vs_direct")}
    for _ in range(trials):
        k = int(rng.integers(1, 4))
        F = random_function(rng)
        var, m = random_levels(rng, k, m0_zero=bool(rng.integers(0, 2)))
        base = parisi_functional(F, var, m, slope_scale=F.slope_scale, numerics=numerics)

        c = float(rng.normal(0, 3))
        shifted = parisi_functional(lambda x: F(x) + c, var, m, slope_scale=F.slope_scale, numerics=numerics)
        worst["shift"] = max(worst["shift"], abs(shifted.x0 - base.x0 - c))

        bump = float(rng.uniform(0.05, 0.5))
        larger = parisi_functional(lambda x: F(x) + bump * (1 + np.tanh(x)), var, m,
                                   slope_scale=F.slope_scale, numerics=numerics)
        worst["monotone"] = max(worst["monotone"], base.x0 - larger.x0)

        plain = parisi_functional(F, var, np.zeros_like(m), slope_scale=F.slope_scale, numerics=numerics)
        worst["jensen"] = max(worst["jensen"], plain.x0 - base.x0)

        direct = direct_functional(F, var, m)
        worst["engine_vs_direct"] = max(worst["engine_vs_direct"], abs(direct - base.x0))

        # two copies: shared levels below r, independent copies from r on (at most two such levels)
        # (with three levels only the last one is split, to keep the tensor oracle accurate)
        r = k if k == 3 else int(rng.integers(max(0, k - 1), k + 1))
        n = np.where(np.arange(k + 1) < r, m / 2.0, m)
        two = direct_two_copy(F, var, n, r)
        worst["doubling"] = max(worst["doubling"], abs(two - 2.0 * base.x0))

        # weighted-average inequality for f <= F, with a nonzero exponent somewhere
        mm = m.copy()
        mm[-1] = max(mm[-1], 0.5)
        f_low = lambda x, F=F, g=bump: F(x) - g * (1.0 + np.cos(x))  # noqa: E731
        lhs, pf, pF = weighted_log_average(f_low, F, var, mm)
        r0 = next(i for i, mv in enumerate(mm) if mv >= M_ZERO)
        worst["weighted_average"] = max(worst["weighted_average"], lhs - mm[r0] * (pf - pF))

        grid_eval = parisi_functional(F, var, m, slope_scale=F.slope_scale, numerics=grid_numerics)
        dev = abs(grid_eval.dx0_dlambda - 1.0)
        for lev in grid_eval.derivative_levels:
            dev = max(dev, float(np.max(np.abs(lev.values - 1.0))))
        worst["normalization"] = max(worst["normalization"], dev)

        # duplicated q-level against the collapsed parameterization
        prior = PriorMeasure.ghatak_sherrington(float(rng.uniform(-1, 1)))
        xi = MixtureXi.sk(float(rng.uniform(0.2, 2.0)))
        u = float(rng.uniform(0.2, 0.9))
        qs = np.sort(rng.uniform(0, u, size=k))
        ms = np.concatenate([[0.0], np.sort(rng.uniform(0, 1, size=k - 1)), [1.0]])
        lam = float(rng.normal(0, 1))
        p = RSBParams(tuple(ms), (0.0, *qs, u), lam, u)
        j = int(rng.integers(1, k + 1))
        dup = RSBParams(tuple(ms[:j]) + (ms[j - 1],) + tuple(ms[j:]),
                        (0.0, *qs[:j], qs[j - 1], *qs[j:], u), lam, u)
        worst["collapse"] = max(worst["collapse"], abs(parisi_value(prior, xi, p, numerics).x0
                                                       - parisi_value(prior, xi, dup, numerics).x0))

    results: dict[str, dict] = {}
    _record(results, "shift", worst["shift"], 1e-10, trials)
    _record(results, "monotone", worst["monotone"], 1e-12, trials, "violation")
    _record(results, "jensen", worst["jensen"], 1e-12, trials, "violation")
    _record(results, "engine_vs_direct", worst["engine_vs_direct"], 1e-7, trials)
    _record(results, "doubling", worst["doubling"], 1e-7, trials)
    _record(results, "weighted_average", worst["weighted_average"], 1e-10, trials, "violation")
    _record(results, "normalization", worst["normalization"], 1e-10, trials)
    _record(results, "collapse", worst["collapse"], 1e-10, trials)
    return results
