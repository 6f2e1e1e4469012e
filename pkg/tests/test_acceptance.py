"""The twelve acceptance criteria, each at its stated tolerance and runtime limit.

Every test prints one ``criterion N [PASS|FAIL]`` line; the lines are
repeated in the terminal summary.
"""

import math
import time

import numpy as np
import pytest

from gsk_parisi.finite_n import concentration_check, estimate_F_N
from gsk_parisi.gs_model import (GSPoint, Region, gs_f_max, gs_identity_check, gs_lambda, gs_phase_diagram, gs_pm,
                                 phase_grid)
from gsk_parisi.model import MixtureXi, PriorMeasure
from gsk_parisi.objective import NEG_INF_MARKER, boundary_value, global_free_energy, optimize_local, serialize_value
from gsk_parisi.parisi_core import RSBParams, lambda_derivative, parisi_value
from gsk_parisi.rs_analysis import at_second_derivative, rs_critical_point, rs_lambda, rs_value
from gsk_parisi.verify import run_checks


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


def test_criterion_01_counterexample(acceptance):
    beta, u = 17.5, 0.05
    with Timer() as t:
        at_closed = 0.5 * beta**2 * (-1 + beta**2 * u**2)
        at_numeric = at_second_derivative(PriorMeasure.ghatak_sherrington(), MixtureXi.sk(beta), u, 0.0,
                                          gs_lambda(GSPoint(beta, 0.0), u))
        fmax, amax = gs_f_max(beta, u)
    ok = beta * u <= 1 and at_closed < 0 and at_numeric < 0 and fmax > 1e-4 and 0 < amax <= u and t.seconds < 1.0
    acceptance(1, "RS counterexample beta=17.5 u=0.05", ok,
               f"f''(0)={at_closed:.4f} (numeric {at_numeric:.4f}), max f={fmax:.3e} at a={amax:.4f}, "
               f"{t.seconds:.2f}s")


def test_criterion_02_at_closed_form(acceptance):
    worst = 0.0
    with Timer() as t:
        for beta in np.linspace(0.5, 20.0, 5):
            for u in np.linspace(0.02, 0.8, 5):
                p = GSPoint(float(beta), 0.0)
                closed = 0.5 * beta**2 * (-1 + beta**2 * u**2)
                num = at_second_derivative(p.prior, p.xi, float(u), 0.0, gs_lambda(p, float(u)))
                worst = max(worst, abs(num - closed) / (1 + abs(closed)))
    acceptance(2, "AT closed form on 5x5 grid", worst < 1e-3 and t.seconds < 10.0,
               f"worst scaled error {worst:.2e}, {t.seconds:.2f}s")


def test_criterion_03_identity(acceptance):
    rng = np.random.default_rng(3)
    with Timer() as t:
        errs = [abs(gs_identity_check(float(rng.uniform(0.1, 25.0)), float(rng.uniform(0.0, 1.0))) - 1.0)
                for _ in range(20)]
    acceptance(3, "Gaussian identity E exp(-b^2 a/2) cosh(z b sqrt a) = 1", max(errs) < 1e-10 and t.seconds < 1.0,
               f"worst |err| {max(errs):.2e}, {t.seconds:.2f}s")


def test_criterion_04_pm_consistency(acceptance):
    rng = np.random.default_rng(4)
    worst_val = worst_lam = 0.0
    with Timer() as t:
        for _ in range(10):
            p = GSPoint(float(rng.uniform(0.1, 5.0)), float(rng.uniform(-1.5, 1.5)))
            u = float(rng.uniform(0.05, 0.95))
            # generic path: the multiplier solving E<sigma^2> = u minimizes the convex P1(0, .)
            lam = rs_lambda(p.prior, p.xi, u, 0.0)
            worst_val = max(worst_val, abs(rs_value(p.prior, p.xi, u, 0.0, lam) - gs_pm(p, u)))
            worst_lam = max(worst_lam, abs(lam - gs_lambda(p, u)))
    ok = worst_val < 1e-8 and worst_lam < 1e-6 and t.seconds < 5.0
    acceptance(4, "paramagnetic value and multiplier", ok,
               f"worst value err {worst_val:.2e}, worst lambda err {worst_lam:.2e}, {t.seconds:.2f}s")


def test_criterion_05_zero_coupling(acceptance):
    zero = MixtureXi.sk(0.0)
    with Timer() as t:
        res0 = global_free_energy(PriorMeasure.ghatak_sherrington(0.0), zero)
        errs = [abs(res0.value - math.log(3))]
        for h in (-0.8, 0.6):
            errs.append(abs(global_free_energy(PriorMeasure.ghatak_sherrington(h), zero).value
                            - math.log(1 + 2 * math.exp(h))))
    du = abs(res0.u_star - 2 / 3)
    ok = max(errs) < 1e-6 and du < 1e-4 and t.seconds < 30.0
    acceptance(5, "beta=0 global value", ok,
               f"worst value err {max(errs):.2e}, |u*-2/3|={du:.2e}, {t.seconds:.2f}s")


def test_criterion_06_sk_regression(acceptance):
    beta, N, n_samples = 0.8, 16, 500
    prior, xi = PriorMeasure.ising(), MixtureXi.sk(beta)
    with Timer() as t:
        q, _ = rs_critical_point(prior, xi, 1.0)
        value = boundary_value(prior, xi, 1.0).value
        est = estimate_F_N(prior, beta, N, n_samples, seed=6)
    exact = math.log(2) + beta**2 / 4
    gap = abs(est.mean - value)
    allowed = 3 * est.stderr + 0.1 / N
    parts = {
        "q=0": abs(q) < 1e-9,
        "value": abs(value - exact) < 1e-6,
        "finite-N": gap <= allowed,
        "runtime": t.seconds < 300.0,
    }
    failed = [k for k, v in parts.items() if not v]
    acceptance(6, "SK beta=0.8 regression", not failed,
               f"q={q:.1e}, |P-log2-b^2/4|={abs(value - exact):.1e}, F_16={est.mean:.5f}+-{est.stderr:.5f}, "
               f"|gap|={gap:.4f} vs allowed {allowed:.4f}, {t.seconds:.1f}s"
               + (f"; failing: {', '.join(failed)}" if failed else ""))


def test_criterion_07_guerra_direction(acceptance):
    beta, h, N = 0.5, 0.2, 10
    with Timer() as t:
        value = global_free_energy(PriorMeasure.ghatak_sherrington(h), MixtureXi.sk(beta)).value
        est = estimate_F_N(PriorMeasure.ghatak_sherrington(h), beta, N, 200, seed=7)
    upper = est.mean <= value + 3 * est.stderr + 0.5 / N
    close = abs(est.mean - value) < 0.08
    acceptance(7, "finite-N mean below the variational value", upper and close and t.seconds < 120.0,
               f"F_10={est.mean:.5f}+-{est.stderr:.5f}, P={value:.5f}, diff={est.mean - value:+.4f}, "
               f"{t.seconds:.1f}s")


def test_criterion_08_functional_properties(acceptance):
    with Timer() as t:
        results = run_checks(trials=100, seed=8)
    bad = [k for k, r in results.items() if not r["passed"]]
    summary = ", ".join(f"{k} {r['worst']:.1e}" for k, r in results.items())
    acceptance(8, "Parisi functional invariants (100 trials)", not bad and t.seconds < 60.0,
               f"{summary}; {t.seconds:.1f}s" + (f"; failing: {bad}" if bad else ""))


def test_criterion_09_lambda_derivative(acceptance):
    rng = np.random.default_rng(9)
    priors = [PriorMeasure.ghatak_sherrington(0.0), PriorMeasure(atoms=((-1.5, 0.3), (0.5, 1.0), (1.0, 0.7)))]
    worst, inside = 0.0, True
    with Timer() as t:
        for i in range(50):
            prior = priors[i % 2]
            d, D = prior.support_bounds()
            k = int(rng.integers(1, 4))
            u = float(rng.uniform(d + 0.05 * (D - d), D))
            q = (0.0, *np.sort(rng.uniform(0, u, k)), u)
            m = (0.0, *np.sort(rng.uniform(0, 1, k - 1)), 1.0)
            xi = MixtureXi({2: float(rng.uniform(0.05, 2.0)), 4: float(rng.uniform(0, 0.5))})
            p = RSBParams(m, q, float(rng.normal(0, 1.5)), u)
            der = lambda_derivative(prior, xi, p)
            h = 1e-4
            fd = (parisi_value(prior, xi, p.with_lambda(p.lam + h)).x0
                  - parisi_value(prior, xi, p.with_lambda(p.lam - h)).x0) / (2 * h)
            worst = max(worst, abs(der - fd))
            inside &= d - 1e-12 <= der <= D + 1e-12
    acceptance(9, "lambda-derivative vs central difference (50 instances)",
               worst < 1e-7 and inside and t.seconds < 30.0,
               f"worst |diff| {worst:.2e}, in [d, D]: {inside}, {t.seconds:.1f}s")


def test_criterion_10_boundary(acceptance):
    h, beta = 0.3, 0.8
    with Timer() as t:
        atomless = boundary_value(PriorMeasure.uniform(-1.0, 1.0), MixtureXi.sk(1.0), 0.0).value
        gs_zero = boundary_value(PriorMeasure.ghatak_sherrington(0.0), MixtureXi.sk(1.0), 0.0).value
        prior, xi = PriorMeasure.ghatak_sherrington(h), MixtureXi.sk(beta)
        edge = boundary_value(prior, xi, 1.0).value
        eps = np.array([1e-3, 1e-4, 1e-5])
        inner = np.array([optimize_local(prior, xi, 1.0 - e).value for e in eps])
        # P(1 - e) = P(1) + a e log(1/e) + b e + o(e): extrapolate the generic path to e = 0
        limit = float(np.linalg.solve(np.column_stack([np.ones(3), eps * np.log(1 / eps), eps]), inner)[0])
    ok = (serialize_value(atomless) == NEG_INF_MARKER and gs_zero == 0.0 and abs(limit - edge) < 2e-3
          and t.seconds < 30.0)
    acceptance(10, "boundary self-overlaps", ok,
               f"atomless -> {serialize_value(atomless)}, GS u=0 -> {gs_zero}, u->1 limit {limit:.6f} vs "
               f"boundary {edge:.6f} (nearest interior point {inner[-1]:.6f}), {t.seconds:.1f}s")


def _transitions(labels):
    pairs = {}
    for a, b in zip(labels, labels[1:]):
        if a is not b:
            key = frozenset((a, b))
            pairs[key] = pairs.get(key, 0) + 1
    return pairs


def _connected(cells):
    cells = set(cells)
    if not cells:
        return False
    stack, seen = [next(iter(cells))], set()
    while stack:
        r, c = stack.pop()
        if (r, c) in seen:
            continue
        seen.add((r, c))
        stack.extend(n for n in ((r + 1, c), (r - 1, c), (r, c + 1), (r, c - 1)) if n in cells)
    return seen == cells


def test_criterion_11_phase_topology(acceptance):
    hb, ib = phase_grid(21, 21)
    with Timer() as t:
        pts = gs_phase_diagram(hb, ib)
    grid = {(p.row, p.col): p.region for p in pts}
    rows, cols = len(ib), len(hb)
    zero_col = int(np.argmin(np.abs(hb)))
    r1_band = all(grid[(r, c)] is Region.R1 for r in range(rows) if ib[r] >= 1.0 for c in range(cols))
    r2 = [rc for rc, reg in grid.items() if reg is Region.R2]
    r2_ok = _connected(r2) and grid[(0, zero_col)] is Region.R2
    rays = [[grid[(r, c)] for r in range(rows)] for c in range(cols)] + \
           [[grid[(r, c)] for c in range(cols)] for r in range(rows)]
    once = all(n <= 1 for ray in rays for n in _transitions(ray).values())
    failed = sum(p.region is None for p in pts)
    unverified = sum(p.status != "ok" for p in pts)
    counts = {reg.value: sum(p.region is reg for p in pts) for reg in Region}
    ok = r1_band and r2_ok and once and failed == 0 and t.seconds < 600.0
    acceptance(11, "phase diagram topology on 21x21", ok,
               f"R1 band {r1_band}, R2 connected near h=0 {r2_ok}, single crossings {once}, counts {counts}, "
               f"unclassified {failed}, flagged {unverified}, {t.seconds:.0f}s")


def test_criterion_12_concentration(acceptance):
    with Timer() as t:
        rep = concentration_check(PriorMeasure.ghatak_sherrington(0.0), 1.0, 10, 1000, seed=12)
    freq = rep["tails"][4.0]["frequency"]
    limit = 2 * math.exp(-4) + 0.03
    acceptance(12, "concentration tail at t=4", freq < limit and t.seconds < 180.0,
               f"frequency {freq:.4f} < {limit:.4f}, {t.seconds:.1f}s")
