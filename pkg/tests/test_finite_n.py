import itertools
import math

import numpy as np
import pytest

from gsk_parisi.finite_n import (BudgetExceeded, DisorderSample, concentration_check, constrained_log_partition,
                                 covariance_residual, estimate_F_N, exact_log_partition, pair_covariance,
                                 self_overlap_profile, write_samples_csv)
from gsk_parisi.model import MixtureXi, ModelError, PriorMeasure

GS = PriorMeasure.ghatak_sherrington()
SK = PriorMeasure.ising()


def brute_force(prior, beta, dis, keep=lambda s: True):
    """Plain loop over all configurations, independent of the block enumerator."""
    g = dis.couplings
    N = dis.N
    terms = []
    for conf in itertools.product(range(len(prior.atoms)), repeat=N):
        s = np.array([prior.atoms[c][0] for c in conf])
        if not keep(s):
            continue
        e = beta / math.sqrt(N) * sum(g[i, j] * s[i] * s[j] for i in range(N) for j in range(i + 1, N))
        terms.append(e + sum(math.log(prior.atoms[c][1]) for c in conf))
    if not terms:
        return -math.inf
    top = max(terms)
    return (top + math.log(math.fsum(math.exp(t - top) for t in terms))) / N


class TestDisorder:
    def test_reproducible(self):
        a = DisorderSample(6, 3, 2).couplings
        np.testing.assert_array_equal(a, DisorderSample(6, 3, 2).couplings)
        assert not np.array_equal(a, DisorderSample(6, 3, 1).couplings)
        assert np.all(np.tril(a) == 0)

    def test_prefix_stable(self):
        # coupling n is the n-th normal of the stream, independent of N's triangle size
        gen = np.random.Generator(np.random.Philox(key=[5, 0]))
        first = gen.standard_normal(3)
        g = DisorderSample(3, 5, 0).couplings
        np.testing.assert_array_equal([g[0, 1], g[0, 2], g[1, 2]], first)


class TestExactLogPartition:
    def test_decoupled(self):
        h = 0.35
        val = exact_log_partition(PriorMeasure.ghatak_sherrington(h), 0.0, DisorderSample(7, 1))
        assert val == pytest.approx(math.log(1 + 2 * math.exp(h)), abs=1e-13)

    def test_two_spins_by_hand(self):
        beta = 1.3
        dis = DisorderSample(2, 9)
        g = dis.couplings[0, 1]
        b = beta * g / math.sqrt(2)
        expected = 0.5 * math.log(2 * math.exp(b) + 2 * math.exp(-b))
        assert exact_log_partition(SK, beta, dis) == pytest.approx(expected, abs=1e-14)

    def test_global_flip_symmetry(self):
        # H is even in the configuration, so reflecting the prior leaves Z unchanged
        prior = PriorMeasure(atoms=((-1.0, 0.3), (0.5, 1.0), (2.0, 0.6)))
        mirrored = PriorMeasure(atoms=tuple((-s, w) for s, w in prior.atoms))
        dis = DisorderSample(7, 4)
        assert exact_log_partition(mirrored, 0.9, dis) == pytest.approx(exact_log_partition(prior, 0.9, dis),
                                                                        abs=1e-13)

    def test_coupling_sign_two_spins(self):
        # with one coupling, flipping one spin maps g to -g
        class Flipped(DisorderSample):
            @property
            def couplings(self):
                return -DisorderSample(2, 4).couplings

        assert exact_log_partition(SK, 0.9, Flipped(2, 4)) == pytest.approx(
            exact_log_partition(SK, 0.9, DisorderSample(2, 4)), abs=1e-14)

    @pytest.mark.parametrize("N", [3, 6])
    def test_matches_brute_force(self, N):
        prior = PriorMeasure(atoms=((-1.0, 0.5), (0.0, 1.0), (2.0, 0.25)))
        dis = DisorderSample(N, 12)
        assert exact_log_partition(prior, 1.1, dis) == pytest.approx(brute_force(prior, 1.1, dis), abs=1e-12)

    def test_block_split(self):
        # 3^9 configurations exceed one block, so the trailing spins are chunked
        dis = DisorderSample(9, 2)
        prof = self_overlap_profile(GS, 0.7, dis)
        assert sorted(prof) == [float(k) for k in range(10)]
        assert exact_log_partition(GS, 0.7, dis) == pytest.approx(brute_force(GS, 0.7, dis), abs=1e-12)

    def test_external_field(self):
        dis = DisorderSample(5, 7)
        tilted = exact_log_partition(GS, 0.8, dis, field_fn=lambda s: 0.4 * s * s)
        assert tilted == pytest.approx(exact_log_partition(PriorMeasure.ghatak_sherrington(0.4), 0.8, dis),
                                       abs=1e-13)

    def test_budget(self):
        with pytest.raises(BudgetExceeded):
            exact_log_partition(GS, 1.0, DisorderSample(17, 0))
        with pytest.raises(BudgetExceeded):
            exact_log_partition(GS, 1.0, DisorderSample(5, 0), budget=100)

    def test_rejects_density(self):
        with pytest.raises(ModelError):
            exact_log_partition(PriorMeasure.uniform(-1, 1), 1.0, DisorderSample(3, 0))


class TestConstrained:
    def test_vacuous_for_ising(self):
        dis = DisorderSample(8, 3)
        for eps in (0.0, 0.1, 1.0):
            assert constrained_log_partition(SK, 0.6, dis, 1.0, eps) == exact_log_partition(SK, 0.6, dis)

    def test_only_zero_configuration(self):
        dis = DisorderSample(6, 0)
        assert constrained_log_partition(GS, 1.5, dis, 0.0, 0.1) == 0.0

    def test_empty_set(self):
        assert constrained_log_partition(GS, 1.0, DisorderSample(4, 0), 0.1, 0.01) == -math.inf

    def test_filtered_enumeration_bit_exact(self):
        # reference: filter the same block enumeration's profile by brute force over configurations
        N, u, eps = 10, 0.6, 0.05
        dis = DisorderSample(N, 21)
        got = constrained_log_partition(GS, 1.0, dis, u, eps)
        prof = self_overlap_profile(GS, 1.0, dis)
        assert list(prof) == [float(k) for k in range(N + 1)]
        # only sum sigma^2 = 6 satisfies |k/10 - 0.6| <= 0.05
        assert got == prof[6.0] / N
        assert got == pytest.approx(brute_force(GS, 1.0, DisorderSample(N, 21), lambda s: np.sum(s * s) == 6),
                                    abs=1e-12)

    def test_subset_monotone(self):
        dis = DisorderSample(7, 5)
        full = exact_log_partition(GS, 0.9, dis)
        for u in np.linspace(0, 1, 8):
            for eps in (0.0, 0.1, 0.3):
                assert constrained_log_partition(GS, 0.9, dis, float(u), eps) <= full

    def test_covering_window_recovers_full(self):
        dis = DisorderSample(7, 5)
        assert constrained_log_partition(GS, 0.9, dis, 0.5, 0.5) == pytest.approx(exact_log_partition(GS, 0.9, dis),
                                                                                  abs=1e-14)


class TestEstimate:
    def test_zero_beta(self):
        est = estimate_F_N(GS, 0.0, 6, 5, seed=1)
        assert est.stderr == 0.0
        assert est.mean == pytest.approx(math.log(3), abs=1e-14)

    def test_deterministic(self):
        a = estimate_F_N(GS, 0.8, 6, 20, seed=4)
        b = estimate_F_N(GS, 0.8, 6, 20, seed=4)
        np.testing.assert_array_equal(a.values, b.values)

    def test_stderr_scaling(self):
        small = estimate_F_N(SK, 1.0, 8, 200, seed=2)
        large = estimate_F_N(SK, 1.0, 8, 800, seed=2)
        ratio = small.stderr**2 / large.stderr**2
        assert 2.5 < ratio < 6.0

    def test_constrained_default_window(self):
        est = estimate_F_N(GS, 0.5, 4, 3, seed=0, u=0.5)
        dis = DisorderSample(4, 0, 0)
        assert est.values[0] == constrained_log_partition(GS, 0.5, dis, 0.5, 0.5)

    def test_csv_and_dict(self, tmp_path):
        est = estimate_F_N(GS, 0.5, 4, 3, seed=9)
        write_samples_csv(tmp_path / "s.csv", est)
        rows = (tmp_path / "s.csv").read_text().splitlines()
        assert rows[0] == "seed,sample_idx,value" and rows[1].startswith("9,0,")
        assert est.to_dict()["n_samples"] == 3


class TestCovariance:
    def test_pair_formula(self):
        rng = np.random.default_rng(0)
        s, r = rng.choice([-1.0, 0.0, 1.0], 9), rng.choice([-1.0, 0.0, 1.0], 9)
        direct = sum(s[i] * s[j] * r[i] * r[j] for i in range(9) for j in range(i + 1, 9)) / 81 * 0.49
        assert pair_covariance(s, r, 0.7) == pytest.approx(direct, abs=1e-15)

    def test_ising_exact_residual(self):
        rep = covariance_residual(SK, 1.3, 6, n_pairs=10, n_disorder=10)
        np.testing.assert_allclose(rep["exact"], 1.3**2 / (2 * 6**2) * 6, rtol=1e-12)

    def test_gs_bound(self):
        rep = covariance_residual(GS, 1.0, 8, n_pairs=100, n_disorder=4000, seed=3)
        assert np.all(rep["exact"] <= rep["bound"] + 1e-15)
        assert np.all(rep["residuals"] <= rep["bound"] + 4 * rep["stderr"])

    def test_zero_beta(self):
        assert covariance_residual(GS, 0.0, 5, n_pairs=5, n_disorder=5)["max_residual"] == 0.0


class TestConcentration:
    def test_zero_beta(self):
        rep = concentration_check(GS, 0.0, 6, 20)
        assert all(t["frequency"] == 0.0 for t in rep["tails"].values())

    @pytest.mark.parametrize("prior,N,beta", [(GS, 10, 1.0), (SK, 12, 0.5)])
    def test_tail_frequencies(self, prior, N, beta):
        rep = concentration_check(prior, beta, N, 1000, seed=1)
        assert rep["tails"][4.0]["frequency"] < 0.05
        for t, row in rep["tails"].items():
            assert row["frequency"] <= 2 * math.exp(-t) + 0.03
