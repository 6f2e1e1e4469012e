"""Closed forms for the spin-1 model with crystal field and its phase diagram.

Spins take values in {-1, 0, 1} with counting measure tilted by ``h sigma^2``
and pair interaction ``xi(x) = beta^2 x^2 / 2``.  At ``q = 0`` the
replica-symmetric value reduces to the paramagnetic entropy form ``PM(u)``
and the fluctuation function ``f(a)`` has a one-dimensional closed form that
does not involve ``h``.

Phase classification of a point ``(beta, h)``:

* ``u1`` maximizes ``PM``; ``u0`` is the largest ``u`` with ``f <= 0`` on
  ``[0, u]`` (the predicate is monotone in ``u``).
* Region 1 if ``u1 <= u0``.  Otherwise the replica-symmetric saddle
  ``(u', q', lambda' = 0)`` of ``sup_u inf_{q, lambda} P1`` decides:
  Region 3 when ``q' = 0`` and Region 2 when ``q' > 0``.  For Region 3 the
  flag ``u' <= u0`` is recorded rather than assumed.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq, minimize_scalar, root
from scipy.special import expit

from ._solve import NoConvergence
from .model import MixtureXi, ModelError, PriorMeasure
from .quadrature import RuleConfig, gaussian_rule
from .rs_analysis import rs_critical_point

LOG2 = math.log(2.0)
_F_ZERO_TOL = 1e-12


@dataclass(frozen=True)
class GSPoint:
    """Inverse temperature ``beta >= 0`` and crystal field ``h``."""

    beta: float
    h: float = 0.0

    def __post_init__(self):
        if not (self.beta >= 0 and math.isfinite(self.beta)) or not math.isfinite(self.h):
            raise ModelError("need finite beta >= 0 and finite h")

    @property
    def prior(self) -> PriorMeasure:
        return PriorMeasure.ghatak_sherrington(self.h)

    @property
    def xi(self) -> MixtureXi:
        return MixtureXi.sk(self.beta)


def _logcosh(x):
    x = np.abs(np.asarray(x, dtype=float))
    return x + np.log1p(np.exp(-2.0 * x)) - LOG2


# -- paramagnetic solution ----------------------------------------------------


def gs_pm(point: GSPoint, u: float, with_flag: bool = False):
    """``PM(u) = h u + beta^2 u^2 / 4 + u log(2/u) + (1 - u) log(1/(1 - u))``.

    At ``u = 0`` and ``u = 1`` the limits ``0`` and ``h + beta^2/4 + log 2``
    are returned; with ``with_flag`` the result is ``(value, on_boundary)``.
    """
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"u={u} outside [0, 1]")
    b2 = point.beta**2
    if u == 0.0:
        val, edge = 0.0, True
    elif u == 1.0:
        val, edge = point.h + 0.25 * b2 + LOG2, True
    else:
        val = point.h * u + 0.25 * b2 * u * u + u * math.log(2.0 / u) - (1.0 - u) * math.log1p(-u)
        edge = False
    return (val, edge) if with_flag else val


def gs_pm_derivative(point: GSPoint, u: float) -> float:
    """``PM'(u) = h + beta^2 u / 2 + log(2 (1 - u) / u)``."""
    return point.h + 0.5 * point.beta**2 * u + math.log(2.0 * (1.0 - u) / u)


def gs_lambda(point: GSPoint, u: float) -> float:
    """Multiplier minimizing ``P1(0, lambda)``: ``-h - beta^2 u / 2 + log(u / (2 (1 - u)))``."""
    return -point.h - 0.5 * point.beta**2 * u + math.log(u / (2.0 * (1.0 - u)))


def gs_pm_argmax(point: GSPoint, scan: int = 2001) -> float:
    """Maximizer ``u1`` of ``PM`` on ``(0, 1)``.

    ``PM' -> +inf`` at 0 and ``-inf`` at 1, so the maximum is interior.  For
    ``beta^2 > 8`` ``PM`` need not be concave, hence a dense scan followed by
    a root of ``PM'`` next to the best scan point.
    """
    # logit-spaced scan resolves maxima very close to 0 or 1
    u = expit(np.linspace(-40.0, 40.0, scan))
    u = u[(u > 0.0) & (u < 1.0)]
    vals = point.h * u + 0.25 * point.beta**2 * u * u + u * np.log(2.0 / u) - (1.0 - u) * np.log1p(-u)
    i = int(np.argmax(vals))
    lo, hi = u[max(i - 1, 0)], u[min(i + 1, len(u) - 1)]
    dlo, dhi = gs_pm_derivative(point, lo), gs_pm_derivative(point, hi)
    if dlo > 0 > dhi:
        return float(brentq(lambda v: gs_pm_derivative(point, v), lo, hi, xtol=1e-15, rtol=1e-15))
    return float(u[i])


# -- fluctuation function -------------------------------------------------------


def _rule(scale: float, config: RuleConfig | None):
    return gaussian_rule(scale, config or RuleConfig(refinement=1))


def gs_f(beta: float, u: float, a, config: RuleConfig | None = None):
    """Closed-form fluctuation function at the paramagnetic critical point.

    ``f(a) = -beta^2 a^2 / 4 + E[Y log Y]`` with
    ``Y = 1 - u + u exp(-beta^2 a / 2) cosh(z beta sqrt(a))``; ``a`` may be an array.
    """
    if not 0.0 <= u <= 1.0:
        raise ValueError("need 0 <= u <= 1")
    a_arr = np.atleast_1d(np.asarray(a, dtype=float))
    if np.any(a_arr < 0) or np.any(a_arr > u + 1e-15):
        raise ValueError("need 0 <= a <= u")
    out = np.empty_like(a_arr)
    log_stay = math.log1p(-u) if u < 1.0 else -math.inf
    log_u = math.log(u) if u > 0.0 else -math.inf
    for i, av in enumerate(a_arr):
        c = beta * math.sqrt(av)
        if c == 0.0 or u == 0.0:
            out[i] = -0.25 * beta**2 * av * av
            continue
        rule = _rule(c, config)
        z = c * rule.nodes
        logy = np.logaddexp(log_stay, log_u + _logcosh(z) - 0.5 * c * c)
        out[i] = -0.25 * beta**2 * av * av + float(rule.weights @ (np.exp(logy) * logy))
    return out if np.ndim(a) else float(out[0])


def gs_identity_check(beta: float, a: float, config: RuleConfig | None = None) -> float:
    """Quadrature value of ``E exp(-beta^2 a / 2) cosh(z beta sqrt(a))`` (exactly 1)."""
    if a < 0:
        raise ValueError("need a >= 0")
    c = beta * math.sqrt(a)
    if c == 0.0:
        return 1.0
    rule = _rule(c, config)
    return float(rule.weights @ np.exp(_logcosh(c * rule.nodes) - 0.5 * c * c))


def gs_f_max(beta: float, u: float, points: int = 257, config: RuleConfig | None = None) -> tuple[float, float]:
    """``(max f, argmax)`` over ``a`` in ``[0, u]``: grid scan plus local polish."""
    if u <= 0.0 or beta == 0.0:
        return 0.0, 0.0
    a = np.linspace(0.0, u, points)
    f = gs_f(beta, u, a, config)
    i = int(np.argmax(f))
    best, where = float(f[i]), float(a[i])
    if 0 < i < points - 1:
        res = minimize_scalar(lambda v: -gs_f(beta, u, float(v), config), bounds=(a[i - 1], a[i + 1]),
                              method="bounded", options={"xatol": 1e-12})
        if -res.fun > best:
            best, where = float(-res.fun), float(res.x)
    return best, where


def _stable(beta: float, u: float) -> bool:
    return gs_f_max(beta, u)[0] <= _F_ZERO_TOL


@lru_cache(maxsize=256)
def gs_u0(beta: float, tol: float = 1e-6) -> float:
    """Largest ``u`` with ``f <= 0`` on ``[0, u]``, by bisection to ``tol``.

    The predicate is monotone in ``u`` because ``f`` increases with ``u`` at
    fixed ``a``.  Returns 1 if it holds at ``u = 1`` and 0 if it fails for
    every positive ``u`` down to ``tol``.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if beta == 0.0 or _stable(beta, 1.0):
        return 1.0
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _stable(beta, mid):
            lo = mid
        else:
            hi = mid
    return lo


# -- replica-symmetric saddle -----------------------------------------------------


def _saddle_moments(beta: float, q: float, c):
    """``(E<sigma^2>, E<sigma>^2)`` at overlap ``q`` and effective field ``c`` (spin-1 prior).

    ``c`` may be an array; the results then have its shape.
    """
    s = beta * math.sqrt(max(q, 0.0))
    c_arr = np.asarray(c, dtype=float)
    if s == 0.0:
        occ = expit(LOG2 + c_arr)
        return (float(occ), 0.0) if c_arr.ndim == 0 else (occ, np.zeros_like(occ))
    rule = gaussian_rule(s, RuleConfig(refinement=1))
    x = s * rule.nodes
    occ = expit(LOG2 + _logcosh(x) + c_arr[..., None])
    mag = np.tanh(x) * occ
    u, m2 = occ @ rule.weights, (mag * mag) @ rule.weights
    return (float(u), float(m2)) if c_arr.ndim == 0 else (u, m2)


def _saddle_residual(point: GSPoint, q: float, c: float) -> np.ndarray:
    u, m2 = _saddle_moments(point.beta, q, c)
    return np.array([q - m2, c - point.h - 0.5 * point.beta**2 * (u - q)])


@dataclass
class RSSaddle:
    u: float
    q: float
    lam: float
    value: float
    residual: float
    converged: bool
    candidates: int = 0


def _q_zero_branch(point: GSPoint) -> list[tuple[float, float]]:
    """Saddles with ``q = 0``: the critical points of ``PM`` (in ``(q, c)`` form)."""
    def g(c):
        return c - point.h - 0.5 * point.beta**2 * float(expit(LOG2 + c))

    span = point.beta**2 + abs(point.h) + 50.0
    cs = np.linspace(point.h - span, point.h + span, 4001)
    vals = np.array([g(c) for c in cs])
    out = []
    for i in range(len(cs) - 1):
        if vals[i] == 0.0:
            out.append((0.0, float(cs[i])))
        elif vals[i] * vals[i + 1] < 0:
            out.append((0.0, float(brentq(g, cs[i], cs[i + 1], xtol=1e-15, rtol=1e-15))))
    return out


def _q_positive_branch(point: GSPoint, nq: int = 40, nc: int = 81) -> list[tuple[float, float]]:
    b2 = point.beta**2
    qs = np.linspace(0.0, 1.0, nq + 1)[1:]
    cs = np.linspace(point.h - 0.5 * b2 - 1.0, point.h + 0.5 * b2 + 1.0, nc)
    res = np.empty((nq, nc, 2))
    for i, q in enumerate(qs):
        u, m2 = _saddle_moments(point.beta, float(q), cs)
        res[i, :, 0] = q - m2
        res[i, :, 1] = cs - point.h - 0.5 * b2 * (u - q)
    found: list[tuple[float, float]] = []
    for i in range(nq - 1):
        for j in range(nc - 1):
            cell = res[i:i + 2, j:j + 2].reshape(4, 2)
            if np.ptp(np.sign(cell[:, 0])) == 0 or np.ptp(np.sign(cell[:, 1])) == 0:
                continue
            x0 = np.array([0.5 * (qs[i] + qs[i + 1]), 0.5 * (cs[j] + cs[j + 1])])
            sol = root(lambda v: _saddle_residual(point, min(max(v[0], 1e-14), 1.0), v[1]), x0,
                       method="hybr", options={"xtol": 1e-13})
            q, c = float(sol.x[0]), float(sol.x[1])
            if not sol.success or not 1e-8 < q <= 1.0:
                continue
            if np.max(np.abs(_saddle_residual(point, q, c))) > 1e-10:
                continue
            if all(abs(q - fq) > 1e-7 or abs(c - fc) > 1e-7 for fq, fc in found):
                found.append((q, c))
    return found


def gs_rs_saddle(point: GSPoint) -> RSSaddle:
    """Saddle ``(u', q', lambda')`` of ``sup_u inf_{q, lambda} P1`` with ``lambda' = 0``.

    With ``lambda = 0`` the conditions are two equations in ``(q, c)`` where
    ``c = h + beta^2 (u - q) / 2`` and ``u = E<sigma^2>``.  Candidates come from
    the ``q = 0`` branch (1-D roots) and a ``(q, c)`` grid scan polished by a
    hybrid Newton solve.  A candidate counts only if its ``q`` is the
    minimizing critical point of ``P1`` at its own ``u``; the one with the
    largest value wins.
    """
    prior, xi = point.prior, point.xi
    cands = _q_zero_branch(point) + _q_positive_branch(point)
    best: RSSaddle | None = None
    fallback: RSSaddle | None = None
    for q, c in cands:
        u = _saddle_moments(point.beta, q, c)[0]
        if not 0.0 < u < 1.0:
            continue
        resid = float(np.max(np.abs(_saddle_residual(point, q, c))))
        if q == 0.0:
            val = gs_pm(point, u)
        else:
            val = (-0.25 * point.beta**2 * (u * u - q * q) + _gs_p1_elog(point.beta, q, c))
        cand = RSSaddle(u, q, 0.0, val, resid, True, len(cands))
        try:
            qmin, _ = rs_critical_point(prior, xi, u)
        except NoConvergence:
            continue
        if fallback is None or val > fallback.value:
            fallback = cand
        if abs(qmin - q) > 1e-6:
            continue
        if best is None or val > best.value:
            best = cand
    if best is not None:
        return best
    if fallback is not None:
        fallback.converged = False
        return fallback
    raise NoConvergence("no replica-symmetric saddle found")


def _gs_p1_elog(beta: float, q: float, c: float) -> float:
    """``E log(1 + 2 cosh(z beta sqrt(q)) e^c)``."""
    s = beta * math.sqrt(q)
    rule = gaussian_rule(s, RuleConfig(refinement=1))
    x = s * rule.nodes
    return float(rule.weights @ np.logaddexp(0.0, LOG2 + _logcosh(x) + c))


def gs_rs_value(point: GSPoint, u: float, q: float, lam: float) -> float:
    """Closed form ``-lam u - beta^2 (u^2 - q^2) / 4 + E log(1 + 2 ch(z beta sqrt(q)) e^{lam + h + beta^2 (u - q)/2})``."""
    c = lam + point.h + 0.5 * point.beta**2 * (u - q)
    return -lam * u - 0.25 * point.beta**2 * (u * u - q * q) + _gs_p1_elog(point.beta, q, c)


# -- phase diagram ------------------------------------------------------------------


class Region(str, enum.Enum):
    R1 = "R1"
    R2 = "R2"
    R3 = "R3"


@dataclass
class PhasePoint:
    h_over_beta: float
    inv_beta: float
    region: Region | None
    u_star: float
    u0: float
    pm_at_ustar: float
    rs_saddle: tuple[float, float, float] | None = None
    saddle_below_u0: bool | None = None
    status: str = "ok"
    row: int = 0
    col: int = 0

    @property
    def point(self) -> GSPoint:
        beta = 1.0 / self.inv_beta
        return GSPoint(beta, self.h_over_beta * beta)


def gs_region(point: GSPoint, q_zero_tol: float = 1e-6) -> PhasePoint:
    """Classify ``point`` into Region 1, 2 or 3."""
    if point.beta <= 0:
        raise ModelError("classification needs beta > 0")
    u1 = gs_pm_argmax(point)
    u0 = gs_u0(point.beta)
    pp = PhasePoint(point.h / point.beta, 1.0 / point.beta, None, u1, u0, gs_pm(point, u1))
    if u1 <= u0:
        pp.region = Region.R1
        return pp
    saddle = gs_rs_saddle(point)
    pp.rs_saddle = (saddle.u, saddle.q, saddle.lam)
    if not saddle.converged:
        pp.status = "saddle_unverified"
    if saddle.q <= q_zero_tol:
        pp.region = Region.R3
        pp.saddle_below_u0 = saddle.u <= u0
    else:
        pp.region = Region.R2
    return pp


def phase_grid(n_h: int = 21, n_inv_beta: int = 21, h_range=(-1.5, 0.5), inv_beta_max: float = 1.5):
    """Grid ``h/beta`` in ``h_range`` (inclusive) and ``1/beta = j inv_beta_max / n`` for ``j = 1..n``."""
    hb = np.linspace(h_range[0], h_range[1], n_h)
    ib = inv_beta_max * np.arange(1, n_inv_beta + 1) / n_inv_beta
    return hb, ib


def gs_phase_diagram(h_over_beta, inv_beta) -> list[PhasePoint]:
    """Classify every grid point; rows follow ``inv_beta``, columns ``h_over_beta``.

    A failing point is recorded with ``status`` set and ``region`` ``None``;
    the scan never aborts.
    """
    out = []
    for r, ib in enumerate(inv_beta):
        for cidx, hb in enumerate(h_over_beta):
            beta = 1.0 / float(ib)
            point = GSPoint(beta, float(hb) * beta)
            try:
                pp = gs_region(point)
            except (NoConvergence, FloatingPointError, ValueError) as exc:
                pp = PhasePoint(float(hb), float(ib), None, math.nan, math.nan, math.nan,
                                status=f"error: {type(exc).__name__}")
            pp.h_over_beta, pp.inv_beta = float(hb), float(ib)
            pp.row, pp.col = r, cidx
            out.append(pp)
    return out


def write_phase_csv(path, points: list[PhasePoint]) -> None:
    header = ["row", "col", "h_over_beta", "inv_beta", "region", "u_star", "u0", "pm_at_ustar",
              "saddle_u", "saddle_q", "saddle_lambda", "saddle_below_u0", "status"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for p in sorted(points, key=lambda p: (p.row, p.col)):
            sad = [repr(v) for v in p.rs_saddle] if p.rs_saddle else ["", "", ""]
            flag = "" if p.saddle_below_u0 is None else str(p.saddle_below_u0).lower()
            w.writerow([p.row, p.col, repr(p.h_over_beta), repr(p.inv_beta),
                        p.region.value if p.region else "", repr(p.u_star), repr(p.u0),
                        repr(p.pm_at_ustar), *sad, flag, p.status])


def write_fcurve_csv(path, beta: float, u: float, points: int = 513) -> tuple[np.ndarray, np.ndarray]:
    a = np.linspace(0.0, u, points)
    f = gs_f(beta, u, a)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["a", "f"])
        for av, fv in zip(a, f):
            w.writerow([repr(float(av)), repr(float(fv))])
    return a, f
