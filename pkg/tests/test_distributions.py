"""Distribution kernels against hand-derived values and brute-force oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.integrate import quad
from scipy.special import logsumexp

from abundmap.distributions import (
    HurdleLogNormalParams,
    ThinningSpec,
    ZinbParams,
    hurdle_lognormal_logpdf,
    hurdle_lognormal_mean,
    nb_logpmf,
    sample_hurdle_lognormal,
    sample_zinb,
    thin_count,
    thinned_zinb_oracle,
    zinb_logpmf,
    zinb_logpmf_parts,
    zinb_pmf,
    zinb_truncation_point,
)
from abundmap.exceptions import ParameterError, TruncationError


class TestZinbPmf:
    def test_all_mass_at_zero_when_p_is_one(self):
        assert zinb_pmf(ZinbParams(1.0, 5.0, 2.0), 0) == pytest.approx(1.0)

    def test_hand_evaluated_zero_probability(self):
        # p + (1-p) * (phi/(mu+phi))^phi = 0.5 + 0.5/3
        val = zinb_pmf(ZinbParams(0.5, 2.0, 1.0), 0)
        assert val == pytest.approx(2.0 / 3.0, abs=1e-12)

    def test_hand_evaluated_nb_kernel_at_one(self):
        # (1-p) * (mu/(mu+phi)) * (phi/(mu+phi)) = 0.5 * (2/3) * (1/3)
        val = zinb_pmf(ZinbParams(0.5, 2.0, 1.0), 1)
        assert val == pytest.approx(1.0 / 9.0, abs=1e-12)

    def test_log_space_finite_at_extreme_counts(self):
        lp = zinb_logpmf(ZinbParams(0.1, 1e4, 0.5), 10**6)
        assert np.isfinite(lp)

    def test_matches_scipy_nbinom_for_integer_phi(self):
        mu, phi = 3.7, 4.0
        ys = np.arange(0, 50)
        ours = nb_logpmf(ys, mu, phi)
        ref = stats.nbinom.logpmf(ys, phi, phi / (mu + phi))
        np.testing.assert_allclose(ours, ref, atol=1e-10)

    @pytest.mark.parametrize("p,mu,phi", [(-0.1, 1, 1), (1.1, 1, 1), (0.5, 0, 1), (0.5, 1, 0), (0.5, -1, 1)])
    def test_invalid_parameters_rejected(self, p, mu, phi):
        with pytest.raises(ParameterError):
            ZinbParams(p, mu, phi)

    def test_negative_or_fractional_y_rejected(self):
        params = ZinbParams(0.5, 2.0, 1.0)
        with pytest.raises(ParameterError):
            zinb_pmf(params, -1)
        with pytest.raises(ParameterError):
            zinb_pmf(params, 1.5)

    @given(
        p=st.floats(0.0, 1.0),
        mu=st.floats(0.05, 50.0),
        phi=st.floats(0.1, 20.0),
    )
    @settings(max_examples=60, deadline=None)
    def test_normalization_property(self, p, mu, phi):
        params = ZinbParams(p, mu, phi)
        t = zinb_truncation_point(params, 1e-12)
        total = np.exp(logsumexp(zinb_logpmf_parts(np.arange(t + 1), p, mu, phi)))
        assert total >= 1.0 - 1e-10
        assert total <= 1.0 + 1e-10

    def test_zero_probability_monotone_in_p(self):
        # finite differences in p at y = 0
        for mu, phi in [(0.5, 0.3), (2.0, 1.0), (10.0, 5.0)]:
            ps = np.linspace(0.01, 0.99, 25)
            vals = [zinb_pmf(ZinbParams(p, mu, phi), 0) for p in ps]
            assert np.all(np.diff(vals) >= -1e-12)


class TestHurdleLogNormal:
    def test_hurdle_mass_at_zero(self):
        params = HurdleLogNormalParams(0.3, 0.0, 1.0)
        assert hurdle_lognormal_logpdf(params, 0.0) == pytest.approx(np.log(0.3))

    def test_standard_lognormal_at_one(self):
        params = HurdleLogNormalParams(0.0, 0.0, 1.0)
        assert hurdle_lognormal_logpdf(params, 1.0) == pytest.approx(-np.log(np.sqrt(2 * np.pi)))

    def test_positive_part_against_quadrature(self):
        params = HurdleLogNormalParams(0.3, 1.0, 0.5)
        mass, _ = quad(lambda y: np.exp(hurdle_lognormal_logpdf(params, y)), 1e-12, 200.0, limit=200)
        assert mass == pytest.approx(0.7, abs=1e-8)
        # density value at y = 2 against an independent construction
        expected = np.log(0.7 * stats.lognorm.pdf(2.0, s=0.5, scale=np.exp(1.0)))
        assert hurdle_lognormal_logpdf(params, 2.0) == pytest.approx(expected, abs=1e-12)

    def test_negative_y_rejected(self):
        with pytest.raises(ParameterError):
            hurdle_lognormal_logpdf(HurdleLogNormalParams(0.3, 0.0, 1.0), -0.5)

    def test_mean_degenerate_cases(self):
        assert hurdle_lognormal_mean(HurdleLogNormalParams(0.0, 0.0, 1e-12)) == pytest.approx(1.0)
        assert hurdle_lognormal_mean(HurdleLogNormalParams(1.0, 5.0, 2.0)) == 0.0

    def test_mean_against_monte_carlo(self):
        params = HurdleLogNormalParams(0.5, 1.0, 1.0)
        rng = np.random.default_rng(20260808)
        draws = sample_hurdle_lognormal(params, rng, size=10**7)
        assert hurdle_lognormal_mean(params) == pytest.approx(0.5 * np.exp(1.5), rel=1e-6)
        assert draws.mean() == pytest.approx(hurdle_lognormal_mean(params), abs=1e-2)


class TestThinning:
    def test_empty_sum(self):
        rng = np.random.default_rng(0)
        assert thin_count(0, ThinningSpec(0.3), rng) == 0

    def test_certain_retention(self):
        rng = np.random.default_rng(0)
        assert thin_count(10, ThinningSpec(1.0), rng) == 10

    def test_binomial_moments(self):
        rng = np.random.default_rng(11)
        n_calls, y, pi = 200, 10**6, 0.5
        vals = np.array([thin_count(y, ThinningSpec(pi), rng) for _ in range(n_calls)])
        se = np.sqrt(y * pi * (1 - pi) / n_calls)
        assert abs(vals.mean() - y * pi) < 3 * se

    def test_deterministic_given_seed(self):
        a = thin_count(1000, ThinningSpec(0.4), np.random.default_rng(7))
        b = thin_count(1000, ThinningSpec(0.4), np.random.default_rng(7))
        assert a == b

    @given(y=st.integers(0, 500), pi=st.floats(0.01, 1.0), seed=st.integers(0, 2**31))
    @settings(max_examples=60, deadline=None)
    def test_thinned_count_bounded(self, y, pi, seed):
        out = thin_count(y, ThinningSpec(pi), np.random.default_rng(seed))
        assert 0 <= out <= y

    @pytest.mark.parametrize("pi", [0.0, -0.2, 1.5])
    def test_invalid_pi_rejected(self, pi):
        with pytest.raises(ParameterError):
            ThinningSpec(pi)


class TestThinnedOracle:
    def test_closure_forced_at_zero(self):
        # Convolution must land on the closed form with mean pi * mu
        val = thinned_zinb_oracle(ZinbParams(0.5, 2.0, 1.0), 0.5, 0)
        assert val == pytest.approx(zinb_pmf(ZinbParams(0.5, 1.0, 1.0), 0), abs=1e-10)
        assert val == pytest.approx(0.75, abs=1e-10)

    def test_identity_thinning(self):
        params = ZinbParams(0.3, 4.0, 2.0)
        for y in [0, 1, 5, 17]:
            assert thinned_zinb_oracle(params, 1.0, y) == pytest.approx(zinb_pmf(params, y), abs=1e-12)

    def test_pure_nb_series(self):
        # No zero inflation: NB(mean 1, dispersion 1) pmf at 1 is 1/4
        val = thinned_zinb_oracle(ZinbParams(0.0, 2.0, 1.0), 0.5, 1)
        assert val == pytest.approx(0.25, abs=1e-10)

    def test_insufficient_truncation_raises(self):
        with pytest.raises(TruncationError):
            thinned_zinb_oracle(ZinbParams(0.0, 50.0, 1.0), 0.5, 0, truncation=60)

    def test_oracle_normalizes(self):
        params = ZinbParams(0.4, 3.0, 0.7)
        total = sum(thinned_zinb_oracle(params, 0.6, y) for y in range(200))
        assert total == pytest.approx(1.0, abs=1e-9)


class TestSamplers:
    def test_zinb_degenerate_all_zero(self):
        rng = np.random.default_rng(3)
        draws = sample_zinb(ZinbParams(1.0, 5.0, 1.0), rng, size=1000)
        assert np.all(draws == 0)

    def test_zinb_zero_fraction_matches_pmf(self):
        params = ZinbParams(0.5, 2.0, 1.0)
        rng = np.random.default_rng(42)
        n = 10**6
        draws = sample_zinb(params, rng, size=n)
        p0 = zinb_pmf(params, 0)
        se = np.sqrt(p0 * (1 - p0) / n)
        assert abs((draws == 0).mean() - p0) < 3 * se

    def test_zinb_chi_square_goodness_of_fit(self):
        params = ZinbParams(0.4, 3.0, 1.5)
        rng = np.random.default_rng(8)
        n = 10**6
        draws = sample_zinb(params, rng, size=n)
        kmax = int(draws.max())
        observed = np.bincount(draws, minlength=kmax + 2).astype(float)
        probs = zinb_pmf(params, np.arange(kmax + 1))
        expected = np.concatenate([probs, [max(1.0 - probs.sum(), 1e-300)]]) * n
        # merge bins with tiny expectation into the tail
        keep = expected >= 5.0
        obs_merged = np.concatenate([observed[keep][:-1], [observed[~keep].sum() + observed[keep][-1]]])
        exp_merged = np.concatenate([expected[keep][:-1], [expected[~keep].sum() + expected[keep][-1]]])
        stat = np.sum((obs_merged - exp_merged) ** 2 / exp_merged)
        pval = stats.chi2.sf(stat, df=len(obs_merged) - 1)
        assert pval > 0.001

    def test_hurdle_zero_fraction(self):
        params = HurdleLogNormalParams(0.3, 0.5, 1.0)
        rng = np.random.default_rng(5)
        n = 10**6
        draws = sample_hurdle_lognormal(params, rng, size=n)
        se = np.sqrt(0.3 * 0.7 / n)
        assert abs((draws == 0).mean() - 0.3) < 3 * se

    def test_hurdle_positive_part_lognormal(self):
        params = HurdleLogNormalParams(0.2, 1.0, 0.5)
        rng = np.random.default_rng(9)
        draws = sample_hurdle_lognormal(params, rng, size=200_000)
        pos = np.log(draws[draws > 0])
        assert pos.mean() == pytest.approx(1.0, abs=0.01)
        assert pos.std() == pytest.approx(0.5, abs=0.01)


class TestThinningClosureGrid:
    """Closure of binomial thinning over the (mu, phi, pi) grid.

    The convolution oracle and the closed-form pmf with mean pi * mu are
    independent routes; pointwise agreement is the content of the closure
    propositions. The acceptance suite runs the full y range; this is a
    spot check over a reduced y range for fast feedback.
    """

    @pytest.mark.parametrize("mu", [0.5, 2.0, 10.0])
    @pytest.mark.parametrize("phi", [0.3, 1.0, 5.0])
    @pytest.mark.parametrize("pi", [0.1, 0.5, 0.9])
    def test_closure_spot_checks(self, mu, phi, pi):
        for p in (0.0, 0.5):
            latent = ZinbParams(p, mu, phi)
            closed = ZinbParams(p, pi * mu, phi)
            t = zinb_truncation_point(latent, 1e-13)
            for y in (0, 1, 3, 10):
                oracle = thinned_zinb_oracle(latent, pi, y, truncation=t, tail_mass=1e-12)
                assert oracle == pytest.approx(zinb_pmf(closed, y), abs=1e-9)
