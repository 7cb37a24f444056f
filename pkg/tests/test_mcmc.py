"""Sampler behaviour: determinism, diagnostics, degenerate data, persistence."""

import numpy as np
import pandas as pd
import pytest

from abundmap.draws import read_draws, write_draws
from abundmap.estimators import HurdleSizeModel, ThinnedCountModel
from abundmap.exceptions import InitializationError
from abundmap.mcmc import SamplerConfig, effective_sample_size, fit_model, split_rhat
from tests.conftest import make_count_cells, make_size_marks


class TestDeterminism:
    def test_identical_seed_gives_bitwise_identical_draws(self):
        marks = make_size_marks(n=200, seed=3)
        kw = dict(p_covariates=["x1"], mu_covariates=["x1"], chains=2,
                  iterations=300, warmup=150, seed=42)
        a = HurdleSizeModel(**kw).fit(marks)
        b = HurdleSizeModel(**kw).fit(marks)
        np.testing.assert_array_equal(a.draws_.draws, b.draws_.draws)

    def test_thread_count_does_not_change_draws(self):
        cells, districts = make_count_cells(n_grid=10, seed=4)
        kw = dict(p_covariates=["x1"], mu_covariates=["x1"], include_gp=False,
                  chains=2, iterations=300, warmup=150, seed=9)
        seq = ThinnedCountModel(threads=1, **kw).fit(cells, districts)
        par = ThinnedCountModel(threads=2, **kw).fit(cells, districts)
        np.testing.assert_array_equal(seq.draws_.draws, par.draws_.draws)

    def test_different_seeds_differ(self):
        marks = make_size_marks(n=200, seed=3)
        kw = dict(p_covariates=["x1"], mu_covariates=["x1"], chains=1,
                  iterations=200, warmup=100)
        a = HurdleSizeModel(seed=1, **kw).fit(marks)
        b = HurdleSizeModel(seed=2, **kw).fit(marks)
        assert not np.array_equal(a.draws_.draws, b.draws_.draws)


class TestDrawShapes:
    def test_kept_draws_equal_iterations_minus_warmup(self):
        marks = make_size_marks(n=150, seed=5)
        est = HurdleSizeModel(p_covariates=[], mu_covariates=[], chains=3,
                              iterations=250, warmup=100, seed=0).fit(marks)
        assert est.draws_.draws.shape[0] == 3
        assert est.draws_.draws.shape[1] == 150
        assert est.draws_.n_draws == 3 * 150

    def test_diagnostics_present_for_every_parameter(self, count_fit):
        est, _, _ = count_fit
        d = est.draws_.diagnostics
        for name in est.draws_.names:
            assert name in d["rhat"]
            assert name in d["ess"]
            assert np.isfinite(d["ess"][name])

    def test_round_trip_persistence(self, size_fit, tmp_path):
        est, _ = size_fit
        write_draws(est.draws_, tmp_path / "draws.csv", tmp_path / "meta.json")
        loaded = read_draws(tmp_path / "draws.csv", tmp_path / "meta.json")
        np.testing.assert_allclose(loaded.draws, est.draws_.draws, atol=1e-12)
        assert loaded.names == est.draws_.names
        assert loaded.meta["model"] == "size"


class TestWellSpecifiedQuality:
    def test_default_length_run_reaches_quality_gates(self):
        """R-hat below 1.05 and bulk ESS above 100 for every parameter."""
        marks = make_size_marks(n=800, seed=21)
        est = HurdleSizeModel(p_covariates=["x1"], mu_covariates=["x1"], chains=4,
                              iterations=2000, warmup=1000, seed=3).fit(marks)
        d = est.draws_.diagnostics
        worst_rhat = max(d["rhat"].values())
        worst_ess = min(d["ess"].values())
        assert worst_rhat < 1.05, f"max rhat {worst_rhat}"
        assert worst_ess > 100, f"min ess {worst_ess}"

    def test_count_model_quality_gates(self):
        cells, districts = make_count_cells(n_grid=36, n_districts=9, seed=22)
        est = ThinnedCountModel(p_covariates=["x1"], mu_covariates=["x1", "x2"],
                                include_gp=False, chains=4, iterations=2000,
                                warmup=1000, seed=4).fit(cells, districts)
        d = est.draws_.diagnostics
        assert max(d["rhat"].values()) < 1.05
        assert min(d["ess"].values()) > 100


class TestDegenerateData:
    def test_all_zero_counts_no_crash_and_zero_mass(self):
        """All-zero data: the sampler must survive and predict zeros.

        The stated gamma dispersion prior concentrates hard near zero, where
        the negative binomial itself degenerates to a point mass at zero, so
        zeros are explained by the count component as readily as by the
        excess-zero component; the excess-zero probability therefore does
        not have to approach one, and the posterior stays diffuse over
        zero-explaining configurations. What must hold: no crash, finite
        draws, and replicated data that is overwhelmingly zero.
        """
        cells, districts = make_count_cells(n_grid=8, seed=30)
        cells["count"] = 0
        est = ThinnedCountModel(p_covariates=["x1"], mu_covariates=["x1"],
                                include_gp=False, chains=2, iterations=400,
                                warmup=200, seed=5).fit(cells, districts)
        assert np.all(np.isfinite(est.draws_.draws))
        from abundmap.diagnostics import simulate_replicates

        reps = simulate_replicates(est.draws_, est.model_, "count", replicates=50, seed=1)
        zero_frac = (reps == 0).mean(axis=1)
        assert np.median(zero_frac) >= 0.99
        assert np.mean(zero_frac == 1.0) > 0.5

    def test_initialization_error_reports_parameters(self):
        class HopelessModel:
            names = ["a", "b"]

            def init_point(self):
                return np.zeros(2)

            def logpost(self, theta):
                return -np.inf

            def make_blocks(self):
                return []

            def cell_loglik(self, theta, idx=None):
                return np.array([-np.inf])

        with pytest.raises(InitializationError) as err:
            fit_model(HopelessModel(), SamplerConfig(chains=1, iterations=10, warmup=5, seed=0))
        assert "last_point" in err.value.report


class TestExchangeability:
    def test_district_relabeling_permutes_gammas_only(self):
        marks = make_size_marks(n=500, n_districts=3, seed=40)
        kw = dict(p_covariates=["x1"], mu_covariates=["x1"], chains=2,
                  iterations=1200, warmup=600, seed=8)
        a = HurdleSizeModel(**kw).fit(marks)

        relabel = {"D0": "D2", "D1": "D0", "D2": "D1"}
        marks_b = marks.assign(district=marks["district"].map(relabel))
        b = HurdleSizeModel(**kw).fit(marks_b)

        for p in ["alpha0", "alpha1[x1]", "beta0", "beta1[x1]", "sigma_size"]:
            ma, mb = a.draws_.col(p), b.draws_.col(p)
            pooled = np.sqrt(ma.var() / len(ma) + mb.var() / len(mb))
            assert abs(ma.mean() - mb.mean()) < 6 * pooled + 0.02
        for old, new in relabel.items():
            ga = a.draws_.col(f"gamma_mu[{old}]")
            gb = b.draws_.col(f"gamma_mu[{new}]")
            pooled = np.sqrt(ga.var() / len(ga) + gb.var() / len(gb))
            assert abs(ga.mean() - gb.mean()) < 6 * pooled + 0.02


class TestDiagnosticFunctions:
    def test_split_rhat_detects_disagreement(self):
        rng = np.random.default_rng(1)
        good = rng.standard_normal((4, 500, 1))
        bad = good.copy()
        bad[0] += 5.0
        assert split_rhat(good)[0] < 1.05
        assert split_rhat(bad)[0] > 1.5

    def test_ess_reflects_autocorrelation(self):
        rng = np.random.default_rng(2)
        iid = rng.standard_normal((2, 1000, 1))
        ar = np.empty((2, 1000, 1))
        for c in range(2):
            x = 0.0
            for t in range(1000):
                x = 0.95 * x + rng.standard_normal() * np.sqrt(1 - 0.95**2)
                ar[c, t, 0] = x
        ess_iid = effective_sample_size(iid)[0]
        ess_ar = effective_sample_size(ar)[0]
        assert ess_iid > 1200
        assert ess_ar < 300
