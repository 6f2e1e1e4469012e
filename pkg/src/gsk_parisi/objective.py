"""Variational formulas: ``P_k``, the multiplier ``lambda(u)``, the local free
energy ``P(xi, u)`` and the global maximum over ``u``.

``P(xi, u)`` is the infimum of ``P_k`` over ``lambda`` and the order
parameters.  The lambda part is convex and solved exactly; the order
parameters are searched by Nelder-Mead in unconstrained coordinates where
the increments of ``q`` (summing to ``u``) and of ``m`` (summing to 1) are
softmax weights, so monotonicity holds by construction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize, minimize_scalar
from scipy.special import softmax

from ._solve import NoConvergence, increasing_root
from .model import MixtureXi, PriorMeasure
from .parisi_core import FAST_NUMERICS, Numerics, ParameterError, RSBParams, parisi_value
from .rs_analysis import Verdict, rs_critical_point, rs_verdict

NEG_INF = float("-inf")
NEG_INF_MARKER = "-infinity"
_GAP_FLOOR = 1e-9
# logits are boxed so a vanishing increment (e.g. q_1 -> 0) cannot drift forever
_LOGIT_BOUND = 25.0


class BoundaryError(ParameterError):
    """``u`` sits on the boundary of ``[d, D]``; use :func:`boundary_value`."""


def serialize_value(value: float):
    """JSON-safe value: the ``-infinity`` marker string replaces a float ``-inf``."""
    if value == NEG_INF:
        return NEG_INF_MARKER
    if not math.isfinite(value):
        raise ValueError(f"cannot serialize {value}")
    return float(value)


def format_value(value: float) -> str:
    return NEG_INF_MARKER if value == NEG_INF else repr(float(value))


def _theta_sum(xi: MixtureXi, m, q) -> float:
    th = xi.theta(np.asarray(q, dtype=float))
    return float(np.dot(np.asarray(m[1:], dtype=float), np.diff(th)[1:]))


def pk_value(prior: PriorMeasure, xi: MixtureXi, params: RSBParams, numerics: Numerics | None = None) -> float:
    """``-lam u + X_0 - (1/2) sum_{l>=1} m_l (theta(q_{l+1}) - theta(q_l))``."""
    x0 = parisi_value(prior, xi, params, numerics).x0
    return -params.lam * params.u + x0 - 0.5 * _theta_sum(xi, params.m, params.q)


def solve_lambda(prior: PriorMeasure, xi: MixtureXi, m, q, u: float, guess: float = 0.0,
                 numerics: Numerics | None = None) -> float:
    """Multiplier with ``dX_0/dlambda = u``.

    ``X_0`` is convex in lambda, so the derivative is nondecreasing and the
    root is found by safeguarded Newton with geometric bracketing.

    Raises:
        BoundaryError: ``u`` is not strictly inside ``(d, D)``.
    """
    d, D = prior.support_bounds()
    if not d < u < D:
        raise BoundaryError(f"u={u} is not inside ({d}, {D}); use boundary_value")

    def fn(lam):
        ev = parisi_value(prior, xi, RSBParams(m, q, lam, u), numerics)
        return ev.dx0_dlambda - u, ev.d2x0_dlambda2

    return increasing_root(fn, guess=guess, step=1.0, ftol=1e-12)


@dataclass
class LocalOptions:
    """Settings for :func:`optimize_local`.

    Attributes:
        k_max: largest number of levels tried.
        tol: stop adding levels once the improvement falls below this.
        starts: Nelder-Mead starts per level count (embedded, equal spacing, random).
        seed: seed for the random starts.
        rs_certificate: stop at one level when the replica-symmetric stability test passes.
        verdict_points: a-grid size of that test.
        max_evals: Nelder-Mead function-evaluation cap per start and free parameter.
        restarts: fresh-simplex restarts from the best point when its run hit the cap.
    """

    k_max: int = 6
    tol: float = 1e-7
    starts: int = 5
    seed: int = 0
    rs_certificate: bool = True
    verdict_points: int = 513
    max_evals: int = 150
    restarts: int = 3
    numerics: Numerics = field(default_factory=lambda: FAST_NUMERICS)


@dataclass
class LocalFreeEnergy:
    u: float
    value: float
    best_params: RSBParams | None
    k_used: int
    converged: bool
    iterations: int
    history: list[float] = field(default_factory=list)
    verdict: str | None = None

    def to_dict(self) -> dict:
        p = self.best_params
        return {
            "u": self.u, "value": serialize_value(self.value), "k_used": self.k_used,
            "converged": self.converged, "iterations": self.iterations,
            "history": [serialize_value(v) for v in self.history], "rs_verdict": self.verdict,
            "params": None if p is None else {"m": list(p.m), "q": list(p.q), "lambda": p.lam},
        }


# -- coordinates ---------------------------------------------------------------


def _encode(params_m, params_q, u) -> np.ndarray:
    """Softmax logits (first logit pinned to 0) of the q- and m-increments."""
    k = len(params_m) - 1
    qg = np.maximum(np.diff(np.asarray(params_q)) / max(u, 1e-300), _GAP_FLOOR)
    mg = np.maximum(np.diff(np.asarray(params_m)), _GAP_FLOOR)
    yq = np.log(qg) - math.log(qg[0])
    ym = np.log(mg) - math.log(mg[0])
    return np.concatenate([yq[1:], ym[1:]]) if k > 1 else yq[1:]


def _decode(y: np.ndarray, k: int, u: float) -> tuple[tuple[float, ...], tuple[float, ...]]:
    yq = np.concatenate([[0.0], y[:k]])
    ym = np.concatenate([[0.0], y[k:]])
    qg = softmax(yq) * u
    q = np.concatenate([[0.0], np.cumsum(qg)])
    q = np.minimum(q, u)
    q[-1] = u
    mg = softmax(ym)
    m = np.concatenate([[0.0], np.cumsum(mg)])
    m = np.minimum(m, 1.0)
    m[-1] = 1.0
    return tuple(m), tuple(q)


def _insert_level(m, q) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Split the widest q-interval in half, reusing its exponent: same value, one more level."""
    gaps = np.diff(q)
    j = int(np.argmax(gaps))
    mid = 0.5 * (q[j] + q[j + 1])
    new_q = tuple(q[: j + 1]) + (mid,) + tuple(q[j + 1:])
    new_m = tuple(m[: j + 1]) + (m[j],) + tuple(m[j + 1:])
    return new_m, new_q


class _Objective:
    """``inf_lambda P_k`` as a function of ``(m, q)`` with warm-started lambda solves."""

    def __init__(self, prior, xi, u, numerics, fixed_lambda: bool):
        self.prior, self.xi, self.u, self.numerics = prior, xi, u, numerics
        self.fixed_lambda = fixed_lambda
        self.lam = 0.0
        self.evaluations = 0
        self.best: tuple[float, RSBParams] | None = None

    def __call__(self, m, q) -> float:
        self.evaluations += 1
        lam = 0.0
        if not self.fixed_lambda:
            lam = solve_lambda(self.prior, self.xi, m, q, self.u, guess=self.lam, numerics=self.numerics)
            self.lam = lam
        params = RSBParams(m, q, lam, self.u)
        val = pk_value(self.prior, self.xi, params, self.numerics)
        if self.best is None or val < self.best[0]:
            self.best = (val, params)
        return val


def _optimize_one_level(obj: _Objective) -> tuple[float, RSBParams, bool]:
    u = obj.u
    if u <= 0.0 or obj.xi.is_zero:
        val = obj((0.0, 1.0), (0.0, 0.0, u))
        return val, obj.best[1], True
    for qv in (0.0, u):
        obj((0.0, 1.0), (0.0, qv, u))
    res = minimize_scalar(lambda qv: obj((0.0, 1.0), (0.0, float(qv), u)), bounds=(0.0, u),
                          method="bounded", options={"xatol": 1e-10 * max(u, 1.0), "maxiter": 200})
    val, params = obj.best
    return val, params, bool(res.success)


def _optimize_levels(obj: _Objective, k: int, previous: RSBParams, opts: LocalOptions,
                     rng: np.random.Generator) -> tuple[float, RSBParams, bool]:
    u = obj.u
    nfree = 2 * k - 1
    starts = []
    em, eq = _insert_level(previous.m, previous.q)
    starts.append(_encode(em, eq, u))
    starts.append(np.zeros(nfree))
    for _ in range(max(opts.starts - 2, 0)):
        starts.append(rng.normal(0.0, 1.5, size=nfree))
    starts = starts[: max(opts.starts, 1)]

    def fun(y):
        m, q = _decode(np.asarray(y), k, u)
        return obj(m, q)

    def search(y0):
        return minimize(fun, np.clip(y0, -_LOGIT_BOUND, _LOGIT_BOUND), method="Nelder-Mead",
                        bounds=[(-_LOGIT_BOUND, _LOGIT_BOUND)] * nfree,
                        options={"xatol": 1e-6, "fatol": 0.1 * opts.tol, "maxfev": opts.max_evals * nfree,
                                 "adaptive": nfree > 2})

    best = min((search(y0) for y0 in starts), key=lambda r: r.fun)
    # restart from the best point with a fresh simplex until a run ends on its own tolerances
    for _ in range(opts.restarts):
        if best.success:
            break
        again = search(best.x)
        if again.fun <= best.fun:
            best = again
    val, params = obj.best
    return val, params, bool(best.success)


def _minimize(prior, xi, u, opts: LocalOptions, fixed_lambda: bool) -> LocalFreeEnergy:
    obj = _Objective(prior, xi, u, opts.numerics, fixed_lambda)
    verdict = None
    if opts.rs_certificate and not xi.is_zero and u > 0.0:
        try:
            sol = rs_verdict(prior, xi, u, points=opts.verdict_points)
            verdict = sol.verdict.value
            obj.lam = sol.lam
            obj((0.0, 1.0), (0.0, sol.q, u))
        except (NoConvergence, ParameterError):
            verdict = Verdict.INCONCLUSIVE.value
    val, params, ok = _optimize_one_level(obj)
    history = [val]
    k_used = 1
    converged = ok
    if verdict == Verdict.RS_CONFIRMED.value or xi.is_zero or u <= 0.0:
        return LocalFreeEnergy(u, val, params, 1, ok, obj.evaluations, history, verdict)
    rng = np.random.default_rng([opts.seed, 7919])
    converged = False
    for k in range(2, opts.k_max + 1):
        new_val, _, ok = _optimize_levels(obj, k, params, opts, rng)
        improvement = val - new_val
        history.append(new_val)
        val, params = obj.best
        k_used = k
        if improvement < opts.tol:
            converged = ok
            k_used = k - 1 if improvement <= 0 else k
            break
    return LocalFreeEnergy(u, val, params, k_used, converged, obj.evaluations, history, verdict)


def optimize_local(prior: PriorMeasure, xi: MixtureXi, u: float, k_max: int | None = None,
                   opts: LocalOptions | None = None) -> LocalFreeEnergy:
    """Local free energy ``P(xi, u)`` and its minimizing parameters.

    Levels are added one at a time until the improvement drops below
    ``opts.tol``.  With ``opts.rs_certificate`` the replica-symmetric
    stability test runs first, and a confirmed stable solution ends the
    search at one level.  The reported value is the smallest ``P_k`` that
    was evaluated.

    Raises:
        BoundaryError: ``u`` is not strictly inside ``(d, D)``.
    """
    opts = opts or LocalOptions()
    if k_max is not None:
        opts = LocalOptions(**{**opts.__dict__, "k_max": k_max})
    d, D = prior.support_bounds()
    if not d < u < D:
        raise BoundaryError(f"u={u} is not inside ({d}, {D}); use boundary_value")
    xi.validate(D)
    return _minimize(prior, xi, u, opts, fixed_lambda=False)


def boundary_value(prior: PriorMeasure, xi: MixtureXi, u: float, opts: LocalOptions | None = None,
                   tol: float = 1e-12) -> LocalFreeEnergy:
    """Local free energy at ``u = d`` or ``u = D``.

    Only configurations with every ``sigma^2 = u`` survive, so the prior is
    restricted to its atoms there (keeping their weights, which contributes
    the log of their mass) and lambda drops out.  Without such atoms the value
    is ``-inf``.
    """
    opts = opts or LocalOptions()
    d, D = prior.support_bounds()
    if abs(u - d) > tol and abs(u - D) > tol:
        raise ParameterError(f"u={u} is not a boundary point of [{d}, {D}]")
    u = d if abs(u - d) <= tol else D
    restricted = prior.restricted_to_square(u, tol=1e-12)
    if restricted is None:
        return LocalFreeEnergy(u, NEG_INF, None, 0, True, 0, [], None)
    return _minimize(restricted, xi, u, opts, fixed_lambda=True)


def local_free_energy(prior: PriorMeasure, xi: MixtureXi, u: float, opts: LocalOptions | None = None,
                      tol: float = 1e-12) -> LocalFreeEnergy:
    """Dispatch to :func:`boundary_value` or :func:`optimize_local`."""
    d, D = prior.support_bounds()
    if abs(u - d) <= tol or abs(u - D) <= tol or d == D:
        return boundary_value(prior, xi, u, opts, tol)
    return optimize_local(prior, xi, u, opts=opts)


@dataclass
class GlobalOptions:
    scan_points: int = 33
    u_tol: float = 1e-5
    local: LocalOptions = field(default_factory=LocalOptions)


@dataclass
class GlobalFreeEnergy:
    value: float
    u_star: float
    profile: list[LocalFreeEnergy]
    converged: bool

    @property
    def profile_points(self) -> list[tuple[float, float]]:
        return [(p.u, p.value) for p in self.profile]

    def to_dict(self) -> dict:
        return {"value": serialize_value(self.value), "u_star": self.u_star, "converged": self.converged,
                "profile": [p.to_dict() for p in self.profile]}


def global_free_energy(prior: PriorMeasure, xi: MixtureXi, opts: GlobalOptions | None = None) -> GlobalFreeEnergy:
    """``max_u P(xi, u)``: a uniform scan of ``[d, D]`` then golden-section refinement.

    Ties are broken toward smaller ``u``.  The profile lists every evaluated
    point sorted by ``u``.
    """
    opts = opts or GlobalOptions()
    d, D = prior.support_bounds()
    cache: dict[float, LocalFreeEnergy] = {}

    def evaluate(u: float) -> LocalFreeEnergy:
        if u not in cache:
            cache[u] = local_free_energy(prior, xi, u, opts.local)
        return cache[u]

    if D - d <= 1e-14:
        res = evaluate(D)
        return GlobalFreeEnergy(res.value, D, [res], res.converged)

    grid = np.linspace(d, D, opts.scan_points)
    for u in grid:
        evaluate(float(u))
    i = max(range(len(grid)), key=lambda j: (cache[float(grid[j])].value, -j))

    lo = float(grid[max(i - 1, 0)])
    hi = float(grid[min(i + 1, len(grid) - 1)])
    # golden-section search on the open interval (boundaries are already scanned)
    shrink = 1e-12 * (D - d)
    a, b = max(lo, d + shrink), min(hi, D - shrink)
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    e = a + invphi * (b - a)
    fc, fe = evaluate(c).value, evaluate(e).value
    while b - a > opts.u_tol:
        if fc >= fe:
            b, e, fe = e, c, fc
            c = b - invphi * (b - a)
            fc = evaluate(c).value
        else:
            a, c, fc = c, e, fe
            e = a + invphi * (b - a)
            fe = evaluate(e).value

    profile = [cache[u] for u in sorted(cache)]
    best = max(profile, key=lambda p: (p.value, -p.u))
    converged = all(p.converged for p in profile)
    return GlobalFreeEnergy(best.value, best.u, profile, converged)


def write_profile_csv(path, profile: list[LocalFreeEnergy]) -> None:
    """CSV with ``u, value, k_used, lambda, q_1..q_k, m_1..m_k`` (unused columns empty)."""
    kmax = max((p.best_params.k for p in profile if p.best_params is not None), default=1)
    header = (["u", "value", "k_used", "lambda"] + [f"q_{i}" for i in range(1, kmax + 1)]
              + [f"m_{i}" for i in range(1, kmax + 1)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for p in profile:
            row = [repr(float(p.u)), format_value(p.value), str(p.k_used)]
            if p.best_params is None:
                row += [""] * (1 + 2 * kmax)
            else:
                bp = p.best_params
                qs = [repr(v) for v in bp.q[1:-1]]
                ms = [repr(v) for v in bp.m[1:]]
                row += ([repr(bp.lam)] + qs + [""] * (kmax - len(qs)) + ms + [""] * (kmax - len(ms)))
            w.writerow(row)
