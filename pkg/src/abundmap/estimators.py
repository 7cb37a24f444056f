"""Estimator-style front ends for the two Bayesian models.

HurdleSizeModel fits the mark-size model to a marks table; ThinnedCountModel
fits the occurrence-count model to a cells table plus per-district retention
probabilities. Both follow the fit/attributes pattern: configuration lives
in __init__ (so get_params/set_params work), data arrives in fit, and the
posterior lands in ``draws_`` with everything prediction needs in its meta.
"""

from __future__ import annotations

import logging

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator

from .draws import PosteriorDraws
from .exceptions import DataError
from .mcmc import SamplerConfig, fit_model
from .models import CountModel, ModelConfig, SizeModel
from .validation import Standardizer, check_columns, check_counts, check_covariates

logger = logging.getLogger(__name__)


def _district_codes(labels) -> tuple[np.ndarray, list[str]]:
    uniq = sorted(set(str(v) for v in labels))
    lut = {name: i for i, name in enumerate(uniq)}
    return np.array([lut[str(v)] for v in labels], dtype=int), uniq


class HurdleSizeModel(BaseEstimator):
    """Bayesian hurdle log-normal regression for mark sizes.

    Parameters name covariate columns of the marks table; an intercept is
    always included. Districts enter as exchangeable random effects on both
    predictors when more than one district is present.
    """

    def __init__(self, p_covariates=(), mu_covariates=(), chains=4, iterations=2000,
                 warmup=1000, seed=0, threads=1, scale_prior_on="sd",
                 include_district_effects=True, beta0_prior=(3.0, -2.0, 10.0),
                 sigma_prior=(3.0, 10.0), flat_bound=1e6):
        self.p_covariates = p_covariates
        self.mu_covariates = mu_covariates
        self.chains = chains
        self.iterations = iterations
        self.warmup = warmup
        self.seed = seed
        self.threads = threads
        self.scale_prior_on = scale_prior_on
        self.include_district_effects = include_district_effects
        self.beta0_prior = beta0_prior
        self.sigma_prior = sigma_prior
        self.flat_bound = flat_bound

    def build_model(self, marks: pd.DataFrame):
        """Validate and assemble the posterior object without sampling."""
        check_columns(marks, ["size", "district"], "marks")
        p_cov = list(self.p_covariates)
        mu_cov = list(self.mu_covariates)
        check_covariates(marks, p_cov, "marks")
        check_covariates(marks, mu_cov, "marks")
        y = marks["size"].to_numpy(dtype=float)
        if np.any(y < 0) or not np.all(np.isfinite(y)):
            raise DataError("mark sizes must be finite and non-negative")

        scaler = Standardizer().fit(marks, sorted(set(p_cov) | set(mu_cov)))
        Xp = scaler.transform(marks, p_cov)
        Xmu = scaler.transform(marks, mu_cov)
        d_idx, labels = _district_codes(marks["district"])
        config = ModelConfig(
            scale_prior_on=self.scale_prior_on,
            include_district_effects=self.include_district_effects,
            flat_bound=self.flat_bound,
            beta0_prior=tuple(self.beta0_prior),
            sigma_prior=tuple(self.sigma_prior),
        )
        model = SizeModel(y, Xp, Xmu, d_idx, labels, config, p_names=p_cov, mu_names=mu_cov)
        meta = {
            "model": "size",
            "p_covariates": p_cov,
            "mu_covariates": mu_cov,
            "scaler": scaler.to_dict(),
            "districts": labels,
            "include_district_effects": bool(model.use_districts),
            "scale_prior_on": self.scale_prior_on,
            "n_obs": int(len(y)),
        }
        return model, meta

    def fit(self, marks: pd.DataFrame):
        model, meta = self.build_model(marks)
        config = SamplerConfig(chains=self.chains, iterations=self.iterations,
                               warmup=self.warmup, seed=self.seed, threads=self.threads)
        draws = fit_model(model, config)
        draws.meta.update(meta)
        draws.meta["sampler"] = {"chains": self.chains, "iterations": self.iterations,
                                 "warmup": self.warmup, "seed": self.seed}
        self.model_ = model
        self.draws_ = draws
        return self


class ThinnedCountModel(BaseEstimator):
    """Bayesian thinned zero-inflated negative binomial for cell counts.

    The districts table supplies the retention probability pi per district;
    cells in districts without a positive pi are excluded from fitting (they
    contribute no count likelihood) and handled at prediction time instead.
    The optional low-rank spatial term rides on the zero-inflation predictor.
    """

    def __init__(self, p_covariates=(), mu_covariates=(), chains=4, iterations=2000,
                 warmup=1000, seed=0, threads=1, scale_prior_on="sd",
                 include_district_effects=True, include_gp=True, gp_num_basis=5,
                 gp_boundary_factor=1.25, gp_layout="per_axis",
                 lscale_prior=(0.976289, 0.008892), beta0_prior=(3.0, -2.0, 10.0),
                 sigma_prior=(3.0, 10.0), phi_prior=(0.01, 0.01), fix_phi=None,
                 flat_bound=1e6):
        self.p_covariates = p_covariates
        self.mu_covariates = mu_covariates
        self.chains = chains
        self.iterations = iterations
        self.warmup = warmup
        self.seed = seed
        self.threads = threads
        self.scale_prior_on = scale_prior_on
        self.include_district_effects = include_district_effects
        self.include_gp = include_gp
        self.gp_num_basis = gp_num_basis
        self.gp_boundary_factor = gp_boundary_factor
        self.gp_layout = gp_layout
        self.lscale_prior = lscale_prior
        self.beta0_prior = beta0_prior
        self.sigma_prior = sigma_prior
        self.phi_prior = phi_prior
        self.fix_phi = fix_phi
        self.flat_bound = flat_bound

    def build_model(self, cells: pd.DataFrame, districts: pd.DataFrame, gp_basis=None):
        """Validate, subset to surveyed districts, assemble the posterior.

        gp_basis lets a previously fitted spatial basis (with its box) be
        reused, as when rebuilding the model for stored draws.
        """
        check_columns(cells, ["cell_id", "lon", "lat", "district", "count"], "cells")
        check_columns(districts, ["district", "pi"], "districts")
        p_cov = list(self.p_covariates)
        mu_cov = list(self.mu_covariates)
        check_covariates(cells, p_cov, "cells")
        check_covariates(cells, mu_cov, "cells")

        pi_map = {}
        for _, row in districts.iterrows():
            pi = row["pi"]
            pi_map[str(row["district"])] = float(pi) if np.isfinite(pi) else np.nan
        for name, pi in pi_map.items():
            if np.isfinite(pi) and not (0.0 <= pi <= 1.0):
                raise DataError(f"district '{name}' has retention pi={pi} outside [0, 1]")

        cell_district = cells["district"].astype(str)
        unknown = sorted(set(cell_district) - set(pi_map))
        if unknown:
            raise DataError(f"cells reference district(s) missing from the districts table: {unknown}")

        pi_cell = cell_district.map(pi_map).to_numpy(dtype=float)
        counts = check_counts(cells["count"], "count")
        surveyed = np.isfinite(pi_cell) & (pi_cell > 0)
        if np.any(counts[~surveyed] > 0):
            bad = sorted(set(cell_district[(~surveyed) & (counts > 0)]))
            raise DataError(
                f"district(s) {bad} have observed counts but retention pi of 0; "
                "a zero retention cannot produce observations"
            )
        if not surveyed.any():
            raise DataError("no cells belong to a district with positive retention")
        if (~surveyed).any():
            logger.info("excluding %d cell(s) in unsurveyed districts from the count fit",
                        int((~surveyed).sum()))

        fit_cells = cells.loc[surveyed].reset_index(drop=True)
        scaler = Standardizer().fit(fit_cells, sorted(set(p_cov) | set(mu_cov)))
        Xp = scaler.transform(fit_cells, p_cov)
        Xmu = scaler.transform(fit_cells, mu_cov)
        d_idx, labels = _district_codes(fit_cells["district"])
        log_pi = np.log(fit_cells["district"].astype(str).map(pi_map).to_numpy(dtype=float))
        coords = fit_cells[["lon", "lat"]].to_numpy(dtype=float)

        config = ModelConfig(
            scale_prior_on=self.scale_prior_on,
            include_district_effects=self.include_district_effects,
            flat_bound=self.flat_bound,
            beta0_prior=tuple(self.beta0_prior),
            sigma_prior=tuple(self.sigma_prior),
            phi_prior=tuple(self.phi_prior),
            lscale_prior=tuple(self.lscale_prior),
            fix_phi=self.fix_phi,
            include_gp=self.include_gp,
            gp_num_basis=self.gp_num_basis,
            gp_boundary_factor=self.gp_boundary_factor,
            gp_layout=self.gp_layout,
        )
        model = CountModel(
            check_counts(fit_cells["count"], "count"), Xp, Xmu, d_idx, labels, log_pi,
            config, coords=coords, p_names=p_cov, mu_names=mu_cov, gp_basis=gp_basis,
        )
        meta = {
            "model": "count",
            "p_covariates": p_cov,
            "mu_covariates": mu_cov,
            "scaler": scaler.to_dict(),
            "districts": labels,
            "pi": {k: (None if not np.isfinite(v) else v) for k, v in pi_map.items()},
            "include_district_effects": bool(model.use_districts),
            "include_gp": bool(self.include_gp),
            "gp_basis": model.gp_basis.to_dict() if model.gp_basis is not None else None,
            "fix_phi": self.fix_phi,
            "scale_prior_on": self.scale_prior_on,
            "n_obs": int(len(fit_cells)),
        }
        return model, meta

    def fit(self, cells: pd.DataFrame, districts: pd.DataFrame):
        model, meta = self.build_model(cells, districts)
        config = SamplerConfig(chains=self.chains, iterations=self.iterations,
                               warmup=self.warmup, seed=self.seed, threads=self.threads)
        draws = fit_model(model, config)
        draws.meta.update(meta)
        draws.meta["sampler"] = {"chains": self.chains, "iterations": self.iterations,
                                 "warmup": self.warmup, "seed": self.seed}
        self.model_ = model
        self.draws_ = draws
        return self


def pointwise_loglik(draws: PosteriorDraws, model, max_draws: int | None = None) -> np.ndarray:
    """Per-draw, per-observation log likelihood matrix.

    Recomputes the likelihood from stored draws through the same model
    object used in fitting (or one rebuilt from the same data).
    """
    flat = draws.flat()
    n_draws = len(flat) if max_draws is None else min(max_draws, len(flat))
    out = np.empty((n_draws, model.n))
    for k in range(n_draws):
        theta = unconstrain_row(model, draws.names, flat[k])
        out[k] = model.cell_loglik(theta)
    return out


def unconstrain_row(model, names, row) -> np.ndarray:
    """Map one constrained draw row back to the model's unconstrained vector."""
    theta = np.array(row, dtype=float, copy=True)
    lookup = {n: i for i, n in enumerate(names)}

    def put(index, name, transform):
        theta[index] = transform(row[lookup[name]])

    if hasattr(model, "i_log_sigma"):
        put(model.i_log_sigma, "sigma_size", np.log)
    if getattr(model, "i_log_phi", None) is not None:
        put(model.i_log_phi, "phi", np.log)
    if model.use_districts:
        put(model.i_lsd_p, "sigma_district_p", np.log)
        put(model.i_lsd_mu, "sigma_district_mu", np.log)
    if getattr(model, "gp_basis", None) is not None:
        put(model.i_log_sgp, "sigma2_gp", lambda v: 0.5 * np.log(v))
        put(model.i_log_l, "l_scale", np.log)
    return theta


__all__ = ["HurdleSizeModel", "ThinnedCountModel", "pointwise_loglik", "unconstrain_row"]
