"""Replica-symmetric solution and its stability against one-step breaking.

The replica-symmetric (one-level) objective is

    P1(q, lam) = -lam u - (theta(u) - theta(q)) / 2
                 + E log int exp(sigma z0 + (lam + (xi'(u) - xi'(q)) / 2) sigma^2) dnu,

with ``E z0^2 = xi'(q)``.  Its critical point is tested against a second
level inserted at ``a`` in ``[q, u]`` through the fluctuation function
``f(a)``, the derivative at ``m = 1`` of the two-level objective
``Phi(m, a)``.  The solution is stable when ``f <= 0`` on ``[q, u]``.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from ._solve import NoConvergence, increasing_root
from .model import MixtureXi, PriorMeasure
from .parisi_core import ParameterError, gibbs_moments, log_partition
from .quadrature import GaussianRule, RuleConfig, gaussian_rule

RS_CONFIRM_TOL = 1e-9
RSB_DETECT_TOL = 1e-6
RESIDUAL_TOL = 1e-9


class Verdict(str, enum.Enum):
    RS_CONFIRMED = "RS_CONFIRMED"
    RSB_DETECTED = "RSB_DETECTED"
    INCONCLUSIVE = "INCONCLUSIVE"


@dataclass
class RSSolution:
    """Replica-symmetric critical point and the outcome of its stability test.

    Attributes:
        residuals: ``(dP1/dlam, dP1/dq)`` at the returned point.
        f_max: largest value of the fluctuation function on ``[q, u]``.
        a_max: where ``f_max`` is attained.
        at_value: ``f''(q)``; nonpositive when the local (Almeida-Thouless) test passes.
        crossings: points where ``f`` changes sign, located to ``1e-10``.
    """

    u: float
    q: float
    lam: float
    value: float
    residuals: tuple[float, float]
    f_max: float
    a_max: float
    at_value: float
    verdict: Verdict
    crossings: list[float] = field(default_factory=list)
    curve: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "u": self.u, "q": self.q, "lambda": self.lam, "value": self.value,
            "residuals": list(self.residuals), "f_max": self.f_max, "a_max": self.a_max,
            "at_value": self.at_value, "verdict": self.verdict.value, "crossings": list(self.crossings),
        }


def _rule(variance: float, prior: PriorMeasure, config: RuleConfig | None) -> GaussianRule:
    return gaussian_rule(math.sqrt(max(variance, 0.0)) * max(prior.sigma_max, 1e-12), config)


def _fixed_lambda(prior: PriorMeasure) -> bool:
    d, D = prior.support_bounds()
    return D - d <= 1e-14


def _check_u(prior: PriorMeasure, u: float) -> None:
    d, D = prior.support_bounds()
    if _fixed_lambda(prior):
        if abs(u - D) > 1e-12:
            raise ParameterError(f"u={u} differs from the constant sigma^2={D}")
        return
    if not d < u < D:
        raise ParameterError(f"u={u} must lie strictly inside ({d}, {D})")


def _effective_lambda(xi: MixtureXi, u: float, q: float, lam: float) -> float:
    return lam + 0.5 * float(xi.dxi(u) - xi.dxi(q))


def _moments(prior, xi, u, q, lam, config=None):
    """Gaussian averages of ``(log Z, <sigma>^2, <sigma^2>, Var sigma^2)`` over ``z0``."""
    var0 = float(xi.dxi(q))
    rule = _rule(var0, prior, config)
    z = math.sqrt(max(var0, 0.0)) * rule.nodes
    leff = _effective_lambda(xi, u, q, lam)
    lz, m1, m2 = gibbs_moments(prior, z, leff)
    _, _, v2 = log_partition(prior, z, leff)
    w = rule.weights
    return float(w @ lz), float(w @ (m1 * m1)), float(w @ m2), float(w @ v2)


def rs_value(prior: PriorMeasure, xi: MixtureXi, u: float, q: float, lam: float,
             config: RuleConfig | None = None) -> float:
    """Replica-symmetric objective ``P1(q, lam)`` at self-overlap ``u``."""
    if not -1e-15 <= q <= u + 1e-15:
        raise ParameterError(f"need 0 <= q <= u, got q={q}, u={u}")
    q = min(max(q, 0.0), u)
    elog = _moments(prior, xi, u, q, lam, config)[0]
    return -lam * u - 0.5 * float(xi.theta(u) - xi.theta(q)) + elog


def rs_residuals(prior: PriorMeasure, xi: MixtureXi, u: float, q: float, lam: float,
                 config: RuleConfig | None = None) -> tuple[float, float]:
    """``(dP1/dlam, dP1/dq) = (E<sigma^2> - u, xi''(q) (q - E<sigma>^2) / 2)``."""
    _, m1sq, m2, _ = _moments(prior, xi, u, q, lam, config)
    return m2 - u, 0.5 * float(xi.ddxi(q)) * (q - m1sq)


def rs_lambda(prior: PriorMeasure, xi: MixtureXi, u: float, q: float, guess: float = 0.0,
              config: RuleConfig | None = None) -> float:
    """Solve ``E<sigma^2> = u`` for lambda at fixed ``q`` (0 when sigma^2 is constant)."""
    if _fixed_lambda(prior):
        return 0.0

    def fn(lam):
        _, _, m2, v2 = _moments(prior, xi, u, q, lam, config)
        return m2 - u, v2

    return increasing_root(fn, guess=guess, step=1.0)


def _q_residual(prior, xi, u, q, guess, config):
    lam = rs_lambda(prior, xi, u, q, guess, config)
    _, m1sq, _, _ = _moments(prior, xi, u, q, lam, config)
    return q - m1sq, lam


def rs_critical_point(prior: PriorMeasure, xi: MixtureXi, u: float,
                      starts: Sequence[float] | None = None, scan_points: int = 65,
                      config: RuleConfig | None = None) -> tuple[float, float]:
    """Critical point ``(q, lam)`` of ``P1`` with the smallest value.

    Lambda is eliminated exactly for each ``q``; the remaining equation
    ``q = E<sigma>^2`` is scanned on a grid in ``[0, u]`` (which always
    contains the starting points) and each sign change is polished by
    Brent's method.  ``q = 0`` is kept whenever it is an exact root.

    Raises:
        NoConvergence: no root satisfies the residual tolerance.
    """
    _check_u(prior, u)
    starts = (0.0, 0.5 * u, 0.9 * u) if starts is None else tuple(starts)
    grid = np.unique(np.concatenate([np.linspace(0.0, u, scan_points),
                                     np.clip(np.asarray(starts, dtype=float), 0.0, u)]))
    g = np.empty_like(grid)
    lams = np.empty_like(grid)
    guess = 0.0
    for i, qv in enumerate(grid):
        g[i], lams[i] = _q_residual(prior, xi, u, float(qv), guess, config)
        guess = lams[i]

    roots: list[tuple[float, float]] = []
    if abs(g[0]) <= 1e-13 or float(xi.ddxi(0.0)) == 0.0:
        roots.append((0.0, float(lams[0])))
    if u > 0 and abs(g[-1]) <= 1e-13:
        roots.append((float(u), float(lams[-1])))
    for i in range(len(grid) - 1):
        if g[i] == 0.0 and i > 0:
            roots.append((float(grid[i]), float(lams[i])))
        if g[i] * g[i + 1] < 0:
            state = {"lam": float(lams[i])}

            def h(qv, state=state):
                val, state["lam"] = _q_residual(prior, xi, u, qv, state["lam"], config)
                return val

            qr = brentq(h, grid[i], grid[i + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
            roots.append((float(qr), rs_lambda(prior, xi, u, float(qr), state["lam"], config)))

    best = None
    for qr, lr in roots:
        r_lam, r_q = rs_residuals(prior, xi, u, qr, lr, config)
        if max(abs(r_lam), abs(r_q)) > RESIDUAL_TOL:
            continue
        val = rs_value(prior, xi, u, qr, lr, config)
        if best is None or val < best[0] - 1e-13:
            best = (val, qr, lr)
    if best is None:
        raise NoConvergence("no replica-symmetric critical point met the residual tolerance")
    return best[1], best[2]


def _fluctuation_terms(prior, xi, u, q, lam, a, m, config):
    """``E0 [(1/m) log E1 X^m]`` and ``E0 E1[(X/E1X) log(X/E1X)]`` for the inserted level ``a``."""
    var0 = float(xi.dxi(q))
    var1 = max(float(xi.dxi(a)) - var0, 0.0)
    r0 = _rule(var0, prior, config)
    r1 = _rule(var1, prior, config)
    z0 = math.sqrt(max(var0, 0.0)) * r0.nodes
    z1 = math.sqrt(var1) * r1.nodes
    lam_a = _effective_lambda(xi, u, a, lam)
    lam_q = _effective_lambda(xi, u, q, lam)
    big = log_partition(prior, (z0[:, None] + z1[None, :]).ravel(), lam_a)[0].reshape(len(z0), len(z1))
    small = log_partition(prior, z0, lam_q)[0]
    rel = big - small[:, None]
    ratio = np.exp(rel)
    entropy = (ratio * rel) @ r1.weights
    if m is None:
        return None, float(r0.weights @ entropy)
    mx = rel.max(axis=1)
    inner = small + mx + np.log(np.exp(m * (rel - mx[:, None])) @ r1.weights) / m
    return float(r0.weights @ inner), float(r0.weights @ entropy)


def _check_a(q, u, a):
    if not q - 1e-14 <= a <= u + 1e-14:
        raise ParameterError(f"need q <= a <= u, got a={a}")
    return min(max(a, q), u)


def rsb_fluctuation(prior: PriorMeasure, xi: MixtureXi, u: float, q: float, lam: float, a: float,
                    config: RuleConfig | None = None) -> float:
    """Fluctuation function ``f(a)``; zero at ``a = q``."""
    a = _check_a(q, u, a)
    if a == q:
        return 0.0
    _, ent = _fluctuation_terms(prior, xi, u, q, lam, a, None, config)
    return -0.5 * float(xi.theta(a) - xi.theta(q)) + ent


def rs_perturbation_value(prior: PriorMeasure, xi: MixtureXi, u: float, q: float, lam: float,
                          m: float, a: float, config: RuleConfig | None = None) -> float:
    """Two-level objective ``Phi(m, a)`` with levels ``q <= a <= u`` and exponents ``(0, m, 1)``."""
    a = _check_a(q, u, a)
    if not 0.0 < m <= 1.0:
        raise ParameterError("need 0 < m <= 1")
    inner, _ = _fluctuation_terms(prior, xi, u, q, lam, a, m, config)
    th = xi.theta
    return (-lam * u - 0.5 * m * float(th(a) - th(q)) - 0.5 * float(th(u) - th(a)) + inner)


def at_second_derivative(prior: PriorMeasure, xi: MixtureXi, u: float, q: float, lam: float,
                         config: RuleConfig | None = None) -> float:
    """``f''(q)`` by one-sided differences, Richardson-extrapolated.

    ``f`` is only defined for ``a >= q``, so a 5-point forward stencil
    (error ``O(h^3)``) is evaluated at ``h`` and ``h/2`` and combined.

    Raises:
        FloatingPointError: ``u - q`` leaves no room for a stencil.
    """
    if u - q < 1e-10:
        raise FloatingPointError("step underflow: q is too close to u for the stencil")
    if xi.is_zero:
        return 0.0
    _, D = prior.support_bounds()
    curv = max(float(xi.ddxi(max(q, 1e-300))), float(xi.ddxi(u)) * 1e-3, 1e-300)
    h = min((u - q) / 8.0, 0.025 / (curv * max(D, 1e-12)))

    def stencil(step):
        f = [rsb_fluctuation(prior, xi, u, q, lam, q + j * step, config) for j in range(5)]
        return (35 * f[0] - 104 * f[1] + 114 * f[2] - 56 * f[3] + 11 * f[4]) / (12 * step * step)

    coarse = stencil(h)
    fine = stencil(0.5 * h)
    return (8.0 * fine - coarse) / 7.0


def fluctuation_curve(prior: PriorMeasure, xi: MixtureXi, u: float, q: float, lam: float,
                      points: int = 513, config: RuleConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``(a, f(a))`` on a uniform grid of ``[q, u]``."""
    a = np.linspace(q, u, points)
    a[-1] = u
    f = np.array([rsb_fluctuation(prior, xi, u, q, lam, float(v), config) for v in a])
    return a, f


def write_fluctuation_csv(path, a: np.ndarray, f: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["a", "f"])
        for av, fv in zip(a, f):
            w.writerow([repr(float(av)), repr(float(fv))])


def classify(f_max: float) -> Verdict:
    if f_max <= RS_CONFIRM_TOL:
        return Verdict.RS_CONFIRMED
    if f_max > RSB_DETECT_TOL:
        return Verdict.RSB_DETECTED
    return Verdict.INCONCLUSIVE


def rs_verdict(prior: PriorMeasure, xi: MixtureXi, u: float, points: int = 513,
               config: RuleConfig | None = None, keep_curve: bool = False) -> RSSolution:
    """Critical point plus a dense scan of ``f`` on ``[q, u]``.

    The grid maximum is polished by a bounded scalar search between its grid
    neighbours, and every sign change of ``f`` is bisected to ``1e-10``.
    """
    q, lam = rs_critical_point(prior, xi, u, config=config)
    value = rs_value(prior, xi, u, q, lam, config)
    residuals = rs_residuals(prior, xi, u, q, lam, config)
    if u - q < 1e-10 or xi.is_zero:
        a_grid, f_grid = np.array([q, u]), np.zeros(2)
    else:
        a_grid, f_grid = fluctuation_curve(prior, xi, u, q, lam, points, config)

    i = int(np.argmax(f_grid))
    f_max, a_max = float(f_grid[i]), float(a_grid[i])
    if 0 < i < len(a_grid) - 1:
        res = minimize_scalar(lambda a: -rsb_fluctuation(prior, xi, u, q, lam, a, config),
                              bounds=(a_grid[i - 1], a_grid[i + 1]), method="bounded",
                              options={"xatol": 1e-12})
        if -res.fun > f_max:
            f_max, a_max = float(-res.fun), float(res.x)

    crossings = []
    for j in range(1, len(a_grid) - 1):
        if f_grid[j] * f_grid[j + 1] < 0:
            crossings.append(float(brentq(lambda a: rsb_fluctuation(prior, xi, u, q, lam, a, config),
                                          a_grid[j], a_grid[j + 1], xtol=1e-10)))

    try:
        at_value = at_second_derivative(prior, xi, u, q, lam, config)
    except FloatingPointError:
        at_value = float("nan")
    verdict = classify(f_max)
    if verdict is not Verdict.INCONCLUSIVE and max(map(abs, residuals)) > RESIDUAL_TOL:
        verdict = Verdict.INCONCLUSIVE
    return RSSolution(u=u, q=q, lam=lam, value=value, residuals=residuals, f_max=f_max, a_max=a_max,
                      at_value=at_value, verdict=verdict, crossings=crossings,
                      curve=(a_grid, f_grid) if keep_curve else None)
