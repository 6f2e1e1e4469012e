"""Exact finite-N free energies by enumeration, averaged over Gaussian disorder.

The Hamiltonian is ``H(sigma) = beta / sqrt(N) sum_{i<j} g_ij sigma_i sigma_j``
and configurations carry the product of prior weights.  Configurations are
enumerated in odometer order (last spin fastest), split into a leading block
and a trailing block so that each batch of energies is one matrix product.

Couplings come from a counter-based Philox stream keyed by
``(seed, sample_index)``; coupling ``n`` in row-major ``i < j`` order is the
``n``-th normal of that stream, so any sample can be regenerated alone.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .model import ModelError, PriorMeasure

ENUMERATION_BUDGET = 10**8
_BLOCK = 4096
_KEY_DIGITS = 9


class BudgetExceeded(RuntimeError):
    """The configuration count exceeds the enumeration budget."""


@dataclass(frozen=True)
class DisorderSample:
    """Couplings ``g_ij`` (``i < j``) of one disorder realization."""

    N: int
    seed: int
    sample_index: int = 0

    @property
    def couplings(self) -> np.ndarray:
        """Strictly upper-triangular ``N x N`` array of standard normals."""
        gen = np.random.Generator(np.random.Philox(key=[self.seed, self.sample_index]))
        n_pairs = self.N * (self.N - 1) // 2
        vals = gen.standard_normal(n_pairs)
        g = np.zeros((self.N, self.N))
        g[np.triu_indices(self.N, 1)] = vals
        return g


def _atoms(prior: PriorMeasure, field_fn=None) -> tuple[np.ndarray, np.ndarray]:
    if prior.density is not None:
        raise ModelError("exact enumeration needs a purely atomic prior")
    s = np.array([a for a, _ in prior.atoms], dtype=float)
    lw = np.log(np.array([w for _, w in prior.atoms], dtype=float))
    if field_fn is not None:
        lw = lw + np.array([field_fn(v) for v in s], dtype=float)
    return s, lw


def _configs(values: np.ndarray, n: int) -> np.ndarray:
    """All ``len(values)**n`` spin rows, last spin varying fastest."""
    if n == 0:
        return np.zeros((1, 0))
    idx = np.array(list(itertools.product(range(len(values)), repeat=n)), dtype=np.intp)
    return values[idx]


def self_overlap_profile(prior: PriorMeasure, beta: float, disorder: DisorderSample,
                         field_fn=None, budget: int = ENUMERATION_BUDGET) -> dict[float, float]:
    """``log`` of the partition function restricted to each value of ``sum_i sigma_i^2``.

    Keys are the sums rounded to 9 decimals; values are unnormalized
    log-partition sums (not divided by ``N``).

    Raises:
        BudgetExceeded: ``len(atoms)**N`` exceeds ``budget``.
    """
    s, lw = _atoms(prior, field_fn)
    N = disorder.N
    n_atoms = len(s)
    total = n_atoms**N
    if total > budget:
        raise BudgetExceeded(f"{n_atoms}^{N} = {total} configurations exceed the budget of {budget}")
    G = beta / math.sqrt(N) * disorder.couplings if N > 1 else np.zeros((N, N))

    n_low = 0
    while n_low < N and n_atoms ** (n_low + 1) <= _BLOCK:
        n_low += 1
    n_high = N - n_low
    low_idx = np.arange(n_high, N)
    high_idx = np.arange(n_high)

    S_low = _configs(s, n_low)
    lw_low = _configs(lw, n_low).sum(axis=1)
    sq_low = (S_low * S_low).sum(axis=1)
    G_ll = G[np.ix_(low_idx, low_idx)]
    e_low = ((S_low @ G_ll) * S_low).sum(axis=1) + lw_low
    G_hl = G[np.ix_(high_idx, low_idx)]
    G_hh = G[np.ix_(high_idx, high_idx)]

    acc: dict[float, list[float]] = {}
    chunk = max(1, _BLOCK * 64 // max(len(S_low), 1))
    high_iter = itertools.product(range(n_atoms), repeat=n_high)
    while True:
        block = np.array(list(itertools.islice(high_iter, chunk)), dtype=np.intp)
        if block.size == 0 and n_high > 0:
            break
        if n_high == 0:
            block = np.zeros((1, 0), dtype=np.intp)
        S_high = s[block]
        e_high = ((S_high @ G_hh) * S_high).sum(axis=1) + lw[block].sum(axis=1)
        sq_high = (S_high * S_high).sum(axis=1)
        energy = e_high[:, None] + e_low[None, :] + (S_high @ G_hl) @ S_low.T
        keys = np.round(sq_high[:, None] + sq_low[None, :], _KEY_DIGITS)
        for key in np.unique(keys):
            acc.setdefault(float(key), []).append(float(logsumexp(energy[keys == key])))
        if n_high == 0:
            break
    return {k: float(logsumexp(v)) for k, v in sorted(acc.items())}


def exact_log_partition(prior: PriorMeasure, beta: float, disorder: DisorderSample, field_fn=None,
                        budget: int = ENUMERATION_BUDGET) -> float:
    """``(1/N) log sum_sigma prod_i w(sigma_i) exp(h(sigma_i)) exp(H(sigma))``."""
    prof = self_overlap_profile(prior, beta, disorder, field_fn, budget)
    return float(logsumexp(list(prof.values()))) / disorder.N


def constrained_from_profile(profile: dict[float, float], N: int, u: float, eps: float) -> float:
    """Restrict a profile to ``|R_11 - u| <= eps``; ``-inf`` when nothing survives."""
    tol = 1e-12 * max(1.0, N)
    vals = [v for k, v in profile.items() if abs(k / N - u) <= eps + tol / N]
    return float(logsumexp(vals)) / N if vals else -math.inf


def constrained_log_partition(prior: PriorMeasure, beta: float, disorder: DisorderSample, u: float,
                              eps: float, field_fn=None, budget: int = ENUMERATION_BUDGET) -> float:
    """``(1/N) log`` of the partition sum over ``|sum_i sigma_i^2 / N - u| <= eps``.

    Returns ``-inf`` (the empty-set marker) when no configuration qualifies.
    """
    prof = self_overlap_profile(prior, beta, disorder, field_fn, budget)
    return constrained_from_profile(prof, disorder.N, u, eps)


@dataclass
class FiniteNEstimate:
    N: int
    n_samples: int
    mean: float
    stderr: float
    values: np.ndarray | None = field(default=None, repr=False)
    seed: int = 0

    def to_dict(self) -> dict:
        from .objective import serialize_value
        return {"N": self.N, "n_samples": self.n_samples, "mean": serialize_value(self.mean),
                "stderr": self.stderr if math.isfinite(self.stderr) else None, "seed": self.seed}


def _summarize(values: np.ndarray) -> tuple[float, float]:
    if np.any(np.isneginf(values)):
        return -math.inf, math.nan
    mean = float(np.sum(values) / len(values))
    if len(values) < 2:
        return mean, math.nan
    std = float(np.std(values, ddof=1))
    return mean, std / math.sqrt(len(values))


def estimate_F_N(prior: PriorMeasure, beta: float, N: int, n_samples: int, seed: int = 0,
                 u: float | None = None, eps: float | None = None, field_fn=None,
                 keep_values: bool = True, budget: int = ENUMERATION_BUDGET) -> FiniteNEstimate:
    """Mean and standard error of ``F_N`` (or ``F_N(u, eps)``) over disorder samples.

    With ``u`` given the constrained free energy is used; ``eps`` defaults to
    ``N**-0.5``.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    vals = np.empty(n_samples)
    for i in range(n_samples):
        dis = DisorderSample(N, seed, i)
        prof = self_overlap_profile(prior, beta, dis, field_fn, budget)
        if u is None:
            vals[i] = float(logsumexp(list(prof.values()))) / N
        else:
            vals[i] = constrained_from_profile(prof, N, u, N**-0.5 if eps is None else eps)
    mean, se = _summarize(vals)
    return FiniteNEstimate(N, n_samples, mean, se, vals if keep_values else None, seed)


def write_samples_csv(path, est: FiniteNEstimate) -> None:
    from .objective import format_value
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "sample_idx", "value"])
        for i, v in enumerate(est.values if est.values is not None else []):
            w.writerow([est.seed, i, format_value(float(v))])


def pair_covariance(sigma: np.ndarray, rho: np.ndarray, beta: float) -> float:
    """Exact ``(1/N) E H(sigma) H(rho) = beta^2 / N^2 sum_{i<j} sigma_i sigma_j rho_i rho_j``."""
    N = len(sigma)
    p = sigma * rho
    return beta**2 / N**2 * 0.5 * (p.sum() ** 2 - (p * p).sum())


def covariance_residual(prior: PriorMeasure, beta: float, N: int, n_pairs: int = 100,
                        n_disorder: int = 4000, seed: int = 0) -> dict:
    """Monte Carlo check of ``|(1/N) E H(sigma) H(rho) - xi(R_12)| <= beta^2 D^2 / (2N)``.

    Configuration pairs are drawn from the normalized prior; for each pair the
    disorder expectation is estimated from ``n_disorder`` coupling draws.

    Returns:
        dict with per-pair ``residuals`` (Monte Carlo), their ``stderr``, the
        ``exact`` residuals ``beta^2/(2 N^2) sum_i sigma_i^2 rho_i^2``, the
        ``bound`` and ``max_residual``.
    """
    s, lw = _atoms(prior)
    p = np.exp(lw - logsumexp(lw))
    _, D = prior.support_bounds()
    gen = np.random.Generator(np.random.Philox(key=[seed, 2**32 + 1]))
    iu = np.triu_indices(N, 1)
    g = gen.standard_normal((n_disorder, len(iu[0])))
    scale = beta / math.sqrt(N)
    res, ses, exact = [], [], []
    for _ in range(n_pairs):
        sig = s[gen.choice(len(s), size=N, p=p)]
        rho = s[gen.choice(len(s), size=N, p=p)]
        h1 = scale * g @ (sig[iu[0]] * sig[iu[1]])
        h2 = scale * g @ (rho[iu[0]] * rho[iu[1]])
        prod = h1 * h2 / N
        r12 = float(sig @ rho) / N
        xi_r = 0.5 * beta**2 * r12**2
        res.append(abs(float(prod.mean()) - xi_r))
        ses.append(float(prod.std(ddof=1)) / math.sqrt(n_disorder) if n_disorder > 1 else 0.0)
        exact.append(abs(pair_covariance(sig, rho, beta) - xi_r))
    bound = beta**2 * D**2 / (2.0 * N)
    return {"residuals": np.array(res), "stderr": np.array(ses), "exact": np.array(exact),
            "bound": bound, "max_residual": float(max(res)) if res else 0.0}


def concentration_check(prior: PriorMeasure, beta: float, N: int, n_samples: int, seed: int = 0,
                        ts=(1.0, 2.0, 4.0), field_fn=None) -> dict:
    """Empirical tails of ``X = log Z_N`` against ``P(|X - E X| >= 2 sqrt(L N t)) <= 2 e^{-t}``.

    ``L = max_{[d, D]} xi + beta^2 D^2 / (2N)`` with ``xi = beta^2 x^2 / 2``;
    the sample mean stands in for ``E X``.
    """
    est = estimate_F_N(prior, beta, N, n_samples, seed, field_fn=field_fn)
    X = est.values * N
    _, D = prior.support_bounds()
    L = 0.5 * beta**2 * D**2 + beta**2 * D**2 / (2.0 * N)
    dev = np.abs(X - X.mean())
    tails = {}
    for t in ts:
        thr = 2.0 * math.sqrt(L * N * t)
        tails[float(t)] = {"threshold": thr, "frequency": float(np.mean(dev >= thr)) if thr > 0 else 0.0,
                           "bound": 2.0 * math.exp(-t)}
    return {"N": N, "n_samples": n_samples, "L": L, "mean": float(X.mean()), "tails": tails}
