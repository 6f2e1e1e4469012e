import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from gsk_parisi.gs_model import (GSPoint, Region, gs_f, gs_f_max, gs_identity_check, gs_lambda, gs_phase_diagram,
                                 gs_pm, gs_pm_argmax, gs_region, gs_rs_saddle, gs_rs_value, gs_u0, phase_grid,
                                 write_fcurve_csv, write_phase_csv)
from gsk_parisi.model import ModelError
from gsk_parisi.objective import LocalOptions, optimize_local
from gsk_parisi.rs_analysis import rs_critical_point, rs_residuals, rs_value


class TestPM:
    def test_entropy_maximum(self):
        assert gs_pm(GSPoint(0.0, 0.0), 2 / 3) == pytest.approx(math.log(3), abs=1e-15)

    def test_limits_flagged(self):
        p = GSPoint(1.5, -0.2)
        assert gs_pm(p, 0.0, with_flag=True) == (0.0, True)
        val, edge = gs_pm(p, 1.0, with_flag=True)
        assert edge and val == pytest.approx(-0.2 + 1.5**2 / 4 + math.log(2))
        assert gs_pm(p, 1 - 1e-12) == pytest.approx(val, abs=1e-9)

    @pytest.mark.parametrize("beta,h,u", [(0.5, 0.0, 0.3), (2.0, 0.7, 0.55), (4.0, -1.2, 0.8), (1.0, 0.2, 0.05)])
    def test_infimum_over_lambda(self, beta, h, u):
        p = GSPoint(beta, h)
        res = minimize_scalar(lambda lam: rs_value(p.prior, p.xi, u, 0.0, lam), bracket=(-5, 5),
                              options={"xtol": 1e-12})
        assert res.fun == pytest.approx(gs_pm(p, u), abs=1e-8)
        assert res.x == pytest.approx(gs_lambda(p, u), abs=1e-5)
        assert rs_value(p.prior, p.xi, u, 0.0, gs_lambda(p, u)) == pytest.approx(gs_pm(p, u), abs=1e-10)

    def test_half_filling_through_generic_optimizer(self):
        p = GSPoint(0.0, 0.0)
        expected = 0.5 * math.log(4) + 0.5 * math.log(2)
        assert expected == pytest.approx(1.0397207708399179)
        assert gs_pm(p, 0.5) == pytest.approx(expected, abs=1e-15)
        assert optimize_local(p.prior, p.xi, 0.5).value == pytest.approx(expected, abs=1e-9)

    @pytest.mark.parametrize("beta,h", [(0.5, 0.0), (3.5, -0.9), (10.0, -6.0)])
    def test_argmax(self, beta, h):
        p = GSPoint(beta, h)
        u1 = gs_pm_argmax(p)
        grid = np.linspace(1e-6, 1 - 1e-6, 20001)
        assert gs_pm(p, u1) >= max(gs_pm(p, float(v)) for v in grid) - 1e-12

    def test_rejects_negative_beta(self):
        with pytest.raises(ModelError):
            GSPoint(-1.0, 0.0)


class TestFluctuation:
    def test_zero_at_origin(self):
        assert gs_f(3.0, 0.4, 0.0) == 0.0

    def test_counterexample_positive(self):
        fmax, amax = gs_f_max(17.5, 0.05)
        assert fmax > 1e-4
        assert 0 < amax <= 0.05

    def test_independent_of_h(self):
        # the closed form takes no h; the generic path agrees for two different fields
        a = np.linspace(0, 0.3, 7)
        for h in (-1.0, 0.8):
            from gsk_parisi.rs_analysis import rsb_fluctuation
            p = GSPoint(2.0, h)
            generic = [rsb_fluctuation(p.prior, p.xi, 0.3, 0.0, gs_lambda(p, 0.3), float(v)) for v in a]
            np.testing.assert_allclose(generic, gs_f(2.0, 0.3, a), atol=1e-9)

    @pytest.mark.parametrize("beta", [0.5, 3.0, 17.5])
    def test_monotone_in_u(self, beta):
        a = np.linspace(0, 0.2, 9)
        prev = gs_f(beta, 0.2, a)
        for u in (0.3, 0.5, 0.8, 0.99):
            cur = gs_f(beta, u, a)
            assert np.all(cur >= prev - 1e-10)
            prev = cur

    def test_fcurve_csv(self, tmp_path):
        a, f = write_fcurve_csv(tmp_path / "f.csv", 17.5, 0.05, points=65)
        rows = (tmp_path / "f.csv").read_text().splitlines()
        assert rows[0] == "a,f" and len(rows) == 66
        assert max(float(r.split(",")[1]) for r in rows[1:]) > 0


class TestIdentity:
    def test_a_zero(self):
        assert gs_identity_check(3.0, 0.0) == 1.0

    @pytest.mark.parametrize("beta,a", [(17.5, 0.05), (2.0, 0.9), (20.0, 1.0), (0.3, 0.01)])
    def test_unit_mean(self, beta, a):
        assert abs(gs_identity_check(beta, a) - 1.0) < 1e-10


class TestU0:
    def test_small_beta(self):
        assert gs_u0(1e-3) == 1.0
        assert gs_u0(0.0) == 1.0

    def test_counterexample(self):
        assert gs_u0(17.5) < 0.05

    def test_monotone_in_beta(self):
        betas = [2.0, 3.0, 5.0, 8.0, 12.0, 17.5]
        u0 = [gs_u0(b) for b in betas]
        assert all(x >= y for x, y in zip(u0, u0[1:]))

    def test_threshold_separates(self):
        beta = 5.0
        u0 = gs_u0(beta)
        assert gs_f_max(beta, max(u0 - 1e-4, 1e-6))[0] <= 1e-12
        assert gs_f_max(beta, min(u0 + 1e-4, 1.0))[0] > 0


class TestSaddle:
    def test_zero_beta(self):
        h = 0.4
        s = gs_rs_saddle(GSPoint(0.0, h))
        assert s.q == 0.0
        assert s.u == pytest.approx(2 * math.exp(h) / (1 + 2 * math.exp(h)), abs=1e-12)

    def test_small_beta_q_zero_branch(self):
        p = GSPoint(0.3, 0.1)
        s = gs_rs_saddle(p)
        assert s.q == 0.0
        # lambda = 0 branch of the multiplier formula
        assert abs(p.h + 0.5 * p.beta**2 * s.u - math.log(s.u / (2 * (1 - s.u)))) < 1e-9
        assert s.value == pytest.approx(max(gs_pm(p, float(v)) for v in np.linspace(0.01, 0.99, 9801)), abs=1e-6)

    def test_spin_glass_saddle(self):
        p = GSPoint(1 / 0.2, 0.0)
        s = gs_rs_saddle(p)
        assert s.q > 0.01
        assert s.converged
        assert max(map(abs, rs_residuals(p.prior, p.xi, s.u, s.q, 0.0))) < 1e-9
        assert gs_rs_value(p, s.u, s.q, 0.0) == pytest.approx(rs_value(p.prior, p.xi, s.u, s.q, 0.0), abs=1e-9)
        assert rs_critical_point(p.prior, p.xi, s.u)[0] == pytest.approx(s.q, abs=1e-6)


class TestRegions:
    def test_high_temperature_is_paramagnetic(self):
        pp = gs_region(GSPoint(0.5, 0.0))
        assert pp.region is Region.R1
        assert pp.u_star <= pp.u0

    def test_spin_glass_wedge(self):
        pp = gs_region(GSPoint(1 / 0.15, -0.3 / 0.15))
        assert pp.region is Region.R2
        assert pp.rs_saddle[1] > 1e-6

    def test_ray_crosses_once(self):
        # along h = 0 the classification changes once, from R2 at low temperature to R1
        labels = [gs_region(GSPoint(1 / t, 0.0)).region for t in np.linspace(0.1, 1.4, 14)]
        changes = sum(a is not b for a, b in zip(labels, labels[1:]))
        assert labels[0] is Region.R2 and labels[-1] is Region.R1
        assert changes == 1

    def test_diagram_deterministic_and_csv(self, tmp_path):
        hb, ib = np.array([-1.0, 0.0]), np.array([0.2, 1.0])
        pts = gs_phase_diagram(hb, ib)
        assert [(p.row, p.col) for p in pts] == [(0, 0), (0, 1), (1, 0), (1, 1)]
        assert all(p.status == "ok" for p in pts)
        write_phase_csv(tmp_path / "a.csv", pts)
        write_phase_csv(tmp_path / "b.csv", list(reversed(gs_phase_diagram(hb, ib))))
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_phase_grid(self):
        hb, ib = phase_grid()
        assert len(hb) == 21 and len(ib) == 21
        assert hb[0] == -1.5 and hb[-1] == 0.5
        assert ib[0] > 0 and ib[-1] == pytest.approx(1.5)


@settings(max_examples=30, deadline=None)
@given(beta=st.floats(0.1, 25.0), a=st.floats(0.0, 1.0))
def test_identity_property(beta, a):
    assert abs(gs_identity_check(beta, a) - 1.0) < 1e-10
