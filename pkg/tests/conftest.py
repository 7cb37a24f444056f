"""Shared synthetic datasets and fitted models for the test suite."""

import numpy as np
import pandas as pd
import pytest
from scipy.special import expit

from abundmap.distributions import sample_hurdle_lognormal_parts, sample_zinb_parts
from abundmap.estimators import HurdleSizeModel, ThinnedCountModel

SIZE_TRUTH = {"alpha0": -1.2, "alpha1[x1]": 0.6, "beta0": 1.5, "beta1[x1]": 0.4,
              "sigma_size": 0.8, "sd_district": 0.3}
COUNT_TRUTH = {"alpha0": 0.2, "alpha1[x1]": -0.5, "beta0": 0.7, "beta1[x1]": 0.8,
               "beta1[x2]": 0.5, "phi": 1.5, "sd_district": 0.25}


def make_size_marks(n=600, n_districts=4, seed=0, truth=SIZE_TRUTH):
    rng = np.random.default_rng(seed)
    x1 = rng.standard_normal(n)
    d = rng.integers(0, n_districts, n)
    gam_p = rng.normal(0, truth["sd_district"], n_districts)
    gam_mu = rng.normal(0, truth["sd_district"], n_districts)
    eta_p = truth["alpha0"] + truth["alpha1[x1]"] * x1 + gam_p[d]
    eta_mu = truth["beta0"] + truth["beta1[x1]"] * x1 + gam_mu[d]
    size = sample_hurdle_lognormal_parts(expit(eta_p), eta_mu, truth["sigma_size"], rng)
    return pd.DataFrame({
        "lon": rng.uniform(0, 1, n), "lat": rng.uniform(0, 1, n),
        "size": size, "district": [f"D{k}" for k in d], "x1": x1,
    })


def make_count_cells(n_grid=20, n_districts=4, pi=0.5, seed=0, truth=COUNT_TRUTH):
    rng = np.random.default_rng(seed)
    xs = (np.arange(n_grid) + 0.5) / n_grid
    lon, lat = (g.ravel() for g in np.meshgrid(xs, xs, indexing="ij"))
    n = n_grid * n_grid
    x1 = rng.standard_normal(n)
    x2 = rng.standard_normal(n)
    side = int(np.sqrt(n_districts))
    d = np.minimum((lat * side).astype(int), side - 1) * side + np.minimum((lon * side).astype(int), side - 1)
    gam_p = rng.normal(0, truth["sd_district"], n_districts)
    gam_mu = rng.normal(0, truth["sd_district"], n_districts)
    eta_p = truth["alpha0"] + truth["alpha1[x1]"] * x1 + gam_p[d]
    mu = np.exp(truth["beta0"] + truth["beta1[x1]"] * x1 + truth["beta1[x2]"] * x2 + gam_mu[d])
    true_counts = sample_zinb_parts(expit(eta_p), mu, truth["phi"], rng)
    observed = rng.binomial(true_counts, pi)
    cells = pd.DataFrame({
        "cell_id": np.arange(n), "lon": lon, "lat": lat,
        "district": [f"D{k}" for k in d], "count": observed,
        "x1": x1, "x2": x2,
    })
    cells.attrs["true_total"] = int(true_counts.sum())
    districts = pd.DataFrame({
        "district": [f"D{k}" for k in range(n_districts)],
        "pi": [pi] * n_districts,
        "known_total": [np.nan] * n_districts,
    })
    return cells, districts


@pytest.fixture(scope="session")
def size_fit():
    marks = make_size_marks(seed=11)
    est = HurdleSizeModel(p_covariates=["x1"], mu_covariates=["x1"],
                          chains=2, iterations=900, warmup=450, seed=5).fit(marks)
    return est, marks


@pytest.fixture(scope="session")
def count_fit():
    # nine districts: the flat district-variance prior needs enough groups
    # on the zero-inflation side to concentrate
    cells, districts = make_count_cells(n_grid=24, n_districts=9, seed=12)
    est = ThinnedCountModel(p_covariates=["x1"], mu_covariates=["x1", "x2"],
                            include_gp=False, chains=2, iterations=900, warmup=450,
                            seed=6).fit(cells, districts)
    return est, cells, districts


@pytest.fixture(scope="session")
def count_fit_gp():
    cells, districts = make_count_cells(n_grid=15, seed=13)
    est = ThinnedCountModel(p_covariates=["x1"], mu_covariates=["x1", "x2"],
                            include_gp=True, gp_num_basis=3, include_district_effects=False,
                            lscale_prior=(3.0, 1.0),
                            chains=2, iterations=700, warmup=350, seed=7).fit(cells, districts)
    return est, cells, districts
