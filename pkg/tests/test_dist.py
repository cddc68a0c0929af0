import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from ectail.dist import (
    NumericsError,
    ParetoParams,
    ServerRate,
    ServiceLawB,
    UnstableQueueError,
    WaitingTailParams,
    lower_incomplete_gamma,
    pareto_mean,
    pk_mean_waiting,
    sample_pareto,
    sample_service_time,
    service_ccdf,
    service_mean,
    service_second_moment,
    waiting_tail_asymptote,
)
import ectail.dist as dist_mod

# Frozen from mpmath.quad of the defining integral at 40 digits.
GAMMA_2_5_AT_3_7 = 1.073375320725312153
CCDF_MU1_Y5 = 0.04201670306481210522
CCDF_MU2_Y5 = 0.005983383625706930544
ASYMPTOTE_AT_50 = 0.0006545454545454545453


def law(x_m=1.0, alpha=3.0, mu=1.0):
    return ServiceLawB(ParetoParams(x_m, alpha), ServerRate(mu))


def quad_gamma(a, x):
    mpmath.mp.dps = 30
    return float(mpmath.quad(lambda u: u ** (a - 1) * mpmath.exp(-u), [0, x]))


class TestParams:
    def test_rejects_alpha_at_most_one(self):
        with pytest.raises(ValueError):
            ParetoParams(1.0, 1.0, allow_heavy=True)

    def test_heavy_needs_override(self):
        with pytest.raises(ValueError):
            ParetoParams(1.0, 1.5)
        assert ParetoParams(1.0, 1.5, allow_heavy=True).alpha == 1.5

    @pytest.mark.parametrize("x_m", [0.0, -1.0, math.inf])
    def test_rejects_bad_scale(self, x_m):
        with pytest.raises(ValueError):
            ParetoParams(x_m, 3.0)

    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            ServerRate(0.0)

    def test_waiting_params_reject_unstable(self):
        with pytest.raises(UnstableQueueError):
            WaitingTailParams(1.0, 1.0, law())


class TestSamplePareto:
    def test_lower_endpoint(self):
        u = np.nextafter(1.0, 0.0)
        assert sample_pareto(ParetoParams(1, 3), u) == pytest.approx(1.0)

    def test_hand_solved_point(self):
        p = ParetoParams(1, 3)
        assert sample_pareto(p, 0.125) == pytest.approx(2.0, rel=1e-14)

    def test_formula_point(self):
        assert sample_pareto(ParetoParams(2, 2.5), 0.5) == pytest.approx(2.639015821545788519, rel=1e-14)

    @pytest.mark.parametrize("u", [0.0, 1.0, -0.1])
    def test_rejects_closed_endpoints(self, u):
        with pytest.raises(ValueError):
            sample_pareto(ParetoParams(1, 3), u)

    def test_empirical_mean(self):
        rng = np.random.default_rng(11)
        u = 1.0 - rng.random(10**7)
        x = sample_pareto(ParetoParams(1, 3), u)
        assert x.min() >= 1.0
        assert x.mean() == pytest.approx(pareto_mean(ParetoParams(1, 3)), rel=0.005)


class TestParetoMean:
    def test_values(self):
        assert pareto_mean(ParetoParams(1, 3)) == 1.5
        assert pareto_mean(ParetoParams(2, 2.5)) == pytest.approx(10 / 3)
        assert pareto_mean(ParetoParams(1, 1e6)) == pytest.approx(1.0, abs=1e-5)


class TestLowerIncompleteGamma:
    def test_exponential_case(self):
        assert lower_incomplete_gamma(1, 2) == pytest.approx(1 - math.exp(-2), abs=1e-12)

    def test_zero(self):
        assert lower_incomplete_gamma(3, 0) == 0.0

    def test_quadrature_point(self):
        assert lower_incomplete_gamma(2.5, 3.7) == pytest.approx(GAMMA_2_5_AT_3_7, abs=1e-12)

    @pytest.mark.parametrize("a", [0.5, 1, 2.5, 3, 7])
    def test_grid_against_quadrature(self, a):
        for x in (0.1, 1.0, a, 10 * a):
            assert lower_incomplete_gamma(a, x) == pytest.approx(quad_gamma(a, x), abs=1e-10)

    def test_limit_is_complete_gamma(self):
        assert lower_incomplete_gamma(3.0, 1e4) == pytest.approx(2.0, abs=1e-12)
        assert lower_incomplete_gamma(2.5, math.inf) == pytest.approx(math.gamma(2.5))

    def test_vectorized_matches_scalar(self):
        xs = np.array([0.0, 0.3, 2.0, 3.5, 4.0, 40.0])
        vec = lower_incomplete_gamma(3.0, xs)
        assert vec.shape == xs.shape
        for x, v in zip(xs, vec):
            assert lower_incomplete_gamma(3.0, float(x)) == v

    @given(
        a=st.floats(0.2, 20),
        x1=st.floats(0, 200),
        x2=st.floats(0, 200),
    )
    @settings(max_examples=200, deadline=None)
    def test_monotone_in_x(self, a, x1, x2):
        lo, hi = sorted((x1, x2))
        assert lower_incomplete_gamma(a, lo) <= lower_incomplete_gamma(a, hi) + 1e-12

    def test_domain(self):
        with pytest.raises(ValueError):
            lower_incomplete_gamma(0.0, 1.0)
        with pytest.raises(ValueError):
            lower_incomplete_gamma(1.0, -1.0)

    def test_nonconvergence_raises(self, monkeypatch):
        monkeypatch.setattr(dist_mod, "GAMMA_MAX_ITER", 2)
        with pytest.raises(NumericsError):
            lower_incomplete_gamma(2.5, 3.0)
        with pytest.raises(NumericsError):
            lower_incomplete_gamma(2.5, 30.0)


class TestServiceCcdf:
    def test_limits(self):
        assert service_ccdf(law(), 1e300) == 0.0
        assert service_ccdf(law(), 1e-14) == pytest.approx(1.0)

    def test_closed_form_points(self):
        assert service_ccdf(law(), 5.0) == pytest.approx(CCDF_MU1_Y5, rel=1e-12)
        assert service_ccdf(law(mu=2.0), 5.0) == pytest.approx(CCDF_MU2_Y5, rel=1e-12)

    def test_rate_scaling(self):
        # doubling mu halves B stochastically
        ys = np.array([0.5, 2.0, 7.0, 30.0])
        assert np.allclose(service_ccdf(law(mu=2.0), ys), service_ccdf(law(), 2 * ys), rtol=1e-13)

    def test_against_monte_carlo(self):
        rng = np.random.default_rng(5)
        n = 10**7
        L = sample_pareto(ParetoParams(1, 3), 1.0 - rng.random(n))
        B = sample_service_time(law(), L, 1.0 - rng.random(n))
        for y in (5.0, 1.0, 20.0):
            p = service_ccdf(law(), y)
            se = math.sqrt(p * (1 - p) / n)
            assert abs(np.mean(B > y) - p) < 3 * se

    @given(st.floats(1e-6, 1e6), st.floats(1e-6, 1e6))
    @settings(max_examples=200, deadline=None)
    def test_monotone(self, y1, y2):
        lo, hi = sorted((y1, y2))
        assert service_ccdf(law(), hi) <= service_ccdf(law(), lo) + 1e-15

    def test_tail_slope_is_minus_alpha(self):
        lo, hi = 1e3, 1e5
        slope = (math.log(service_ccdf(law(), hi)) - math.log(service_ccdf(law(), lo))) / math.log(hi / lo)
        assert slope == pytest.approx(-3.0, abs=0.01)

    def test_ks_against_monte_carlo(self):
        rng = np.random.default_rng(17)
        n = 10**6
        L = sample_pareto(ParetoParams(1, 3), 1.0 - rng.random(n))
        B = sample_service_time(law(), L, 1.0 - rng.random(n))
        res = stats.kstest(B, lambda y: 1.0 - service_ccdf(law(), y))
        assert res.pvalue > 0.01


class TestSampleServiceTime:
    def test_points(self):
        assert sample_service_time(law(), 1.0, math.exp(-1)) == pytest.approx(1.0)
        assert sample_service_time(law(mu=2.0), 3.0, math.exp(-4)) == pytest.approx(6.0)

    def test_rejects_small_chunk(self):
        with pytest.raises(ValueError):
            sample_service_time(law(), 0.5, 0.5)

    def test_mean(self):
        rng = np.random.default_rng(3)
        n = 10**6
        L = sample_pareto(ParetoParams(1, 3), 1.0 - rng.random(n))
        B = sample_service_time(law(), L, 1.0 - rng.random(n))
        assert B.mean() == pytest.approx(1.5, rel=0.01)


class TestWaitingAsymptote:
    def params(self):
        return WaitingTailParams(0.3, 0.45, law())

    def test_vanishes(self):
        assert waiting_tail_asymptote(self.params(), 1e12) < 1e-20

    def test_golden_value(self):
        assert waiting_tail_asymptote(self.params(), 50.0) == pytest.approx(ASYMPTOTE_AT_50, rel=1e-12)

    def test_doubling_ratio(self):
        p = self.params()
        for x in (1e2, 1e3, 1e4):
            ratio = waiting_tail_asymptote(p, x) / waiting_tail_asymptote(p, 2 * x)
            assert ratio == pytest.approx(2.0**2, rel=1e-6)

    def test_tail_slope(self):
        p = self.params()
        slope = math.log(waiting_tail_asymptote(p, 1e5) / waiting_tail_asymptote(p, 1e3)) / math.log(100)
        assert slope == pytest.approx(-2.0, abs=0.01)

    def test_unclamped_at_small_x(self):
        heavy_load = WaitingTailParams.from_load(0.633, law())
        assert waiting_tail_asymptote(heavy_load, 3.0) > 1.0

    def test_from_load(self):
        p = WaitingTailParams.from_load(0.3, law())
        assert p.rho == pytest.approx(0.45)


class TestPkMean:
    def test_second_moment(self):
        assert service_second_moment(law()) == pytest.approx(6.0)

    def test_second_moment_monte_carlo(self):
        rng = np.random.default_rng(23)
        n = 10**7
        B = sample_pareto(ParetoParams(1, 3), 1.0 - rng.random(n)) * rng.exponential(1.0, n)
        # heavy tail: E[B^2] converges slowly, so only a loose check
        assert np.mean(B**2) == pytest.approx(6.0, rel=0.1)

    def test_hand_value(self):
        assert pk_mean_waiting(1 / 3, law()) == pytest.approx(2.0)
        assert service_mean(law()) == 1.5

    def test_vanishing_load(self):
        assert pk_mean_waiting(1e-12, law()) == pytest.approx(0.0, abs=1e-10)

    def test_rejects_unstable(self):
        with pytest.raises(UnstableQueueError):
            pk_mean_waiting(1.0, law())

    def test_rejects_heavy(self):
        heavy = ServiceLawB(ParetoParams(1, 2.0, allow_heavy=True), ServerRate(1))
        with pytest.raises(ValueError):
            pk_mean_waiting(0.1, heavy)
