"""Universal kriging with a Matern covariance, fitted by REML.

The estimator follows the usual fit/predict shape. Covariance parameters
(sill, range, nugget) are found by maximizing the restricted likelihood
over their logs with a deterministic multi-start Nelder-Mead search; the
smoothness nu is fixed by the caller (default 1.5). The trend is an
intercept plus optional covariate columns, estimated by GLS inside the
restricted likelihood, so kriging means are invariant to constant shifts
of the data.
"""

from __future__ import annotations

import numpy as np
from scipy import linalg, optimize, special
from sklearn.base import BaseEstimator

from .exceptions import DataError, KrigingError
from .grid import project_km
from .validation import check_coords, check_finite

_LOG_2PI = np.log(2.0 * np.pi)


def matern_correlation(dist, range_, nu: float) -> np.ndarray:
    """Matern correlation with sklearn-style sqrt(2 nu) distance scaling."""
    d = np.asarray(dist, dtype=float) / range_
    if nu == 0.5:
        return np.exp(-d)
    if nu == 1.5:
        s = np.sqrt(3.0) * d
        return (1.0 + s) * np.exp(-s)
    if nu == 2.5:
        s = np.sqrt(5.0) * d
        return (1.0 + s + s * s / 3.0) * np.exp(-s)
    s = np.sqrt(2.0 * nu) * d
    out = np.ones_like(s)
    pos = s > 0
    sp = s[pos]
    out[pos] = (2.0 ** (1.0 - nu) / special.gamma(nu)) * sp**nu * special.kv(nu, sp)
    return out


def dedupe_sites(sites, values) -> tuple[np.ndarray, np.ndarray]:
    """Collapse exactly coincident sites, averaging their values."""
    sites = check_coords(sites, "sites")
    values = check_finite(values, "values")
    uniq, inverse = np.unique(sites, axis=0, return_inverse=True)
    if len(uniq) == len(sites):
        return sites, values
    sums = np.bincount(inverse, weights=values, minlength=len(uniq))
    counts = np.bincount(inverse, minlength=len(uniq))
    return uniq, sums / counts


class MaternKriging(BaseEstimator):
    """Universal kriging estimator.

    Parameters
    ----------
    smoothness : Matern smoothness nu (1.5 by default: once-differentiable
        field with a closed-form correlation).
    coord_mode : "lonlat" projects coordinates to local kilometres before
        computing distances; "planar" uses them as-is.
    n_starts : number of deterministic optimizer starts.
    maxiter : Nelder-Mead iteration cap per start.
    """

    def __init__(self, smoothness: float = 1.5, coord_mode: str = "planar",
                 n_starts: int = 4, maxiter: int = 250):
        self.smoothness = smoothness
        self.coord_mode = coord_mode
        self.n_starts = n_starts
        self.maxiter = maxiter

    # -- internals ---------------------------------------------------------

    def _project(self, coords) -> np.ndarray:
        return project_km(coords[:, 0], coords[:, 1], lat0=self.lat0_, mode=self.coord_mode)

    def _trend_matrix(self, n, trend) -> np.ndarray:
        if trend is None:
            return np.ones((n, 1))
        t = np.atleast_2d(np.asarray(trend, dtype=float))
        if t.shape[0] != n:
            t = t.T
        if t.shape[0] != n:
            raise DataError("trend matrix rows must match number of sites")
        return np.column_stack([np.ones(n), t])

    def _reml_neg_loglik(self, log_params, dist, F, y):
        sill = np.exp(log_params[0])
        rng_ = np.exp(log_params[1])
        nugget = np.exp(log_params[2])
        if not np.all(np.isfinite([sill, rng_, nugget])):
            return 1e12
        cov = sill * matern_correlation(dist, rng_, self.smoothness)
        cov[np.diag_indices_from(cov)] += nugget + 1e-12 * max(sill, 1e-12)
        try:
            cf = linalg.cho_factor(cov, lower=True)
        except linalg.LinAlgError:
            return 1e12
        logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
        ci_f = linalg.cho_solve(cf, F)
        ci_y = linalg.cho_solve(cf, y)
        a = F.T @ ci_f
        try:
            ca = linalg.cho_factor(a, lower=True)
        except linalg.LinAlgError:
            return 1e12
        logdet_a = 2.0 * np.sum(np.log(np.diag(ca[0])))
        beta = linalg.cho_solve(ca, F.T @ ci_y)
        resid = y - F @ beta
        quad = float(resid @ linalg.cho_solve(cf, resid))
        n, p = F.shape
        return 0.5 * (logdet + logdet_a + quad + (n - p) * _LOG_2PI)

    # -- estimator API -----------------------------------------------------

    def fit(self, X, y, trend=None):
        """Fit covariance parameters and the GLS trend.

        X : (n, 2) site coordinates. y : (n,) values. trend : optional
        (n, k) covariates appended to the intercept.
        """
        sites = check_coords(X, "sites")
        values = check_finite(y, "values")
        if len(values) != len(sites):
            raise DataError("values length must match sites")
        self.lat0_ = float(np.mean(sites[:, 1])) if self.coord_mode == "lonlat" else None

        # collapse duplicates (trend rows follow the kept sites)
        uniq, inverse = np.unique(sites, axis=0, return_inverse=True)
        if len(uniq) < len(sites):
            order = np.argsort(inverse, kind="stable")
            first = order[np.searchsorted(inverse[order], np.arange(len(uniq)))]
            sums = np.bincount(inverse, weights=values, minlength=len(uniq))
            counts = np.bincount(inverse, minlength=len(uniq))
            values = sums / counts
            sites = uniq
            if trend is not None:
                trend = np.asarray(trend, dtype=float)[first]
        if len(sites) < 3:
            raise DataError("kriging needs at least 3 distinct sites")

        xy = self._project(sites)
        F = self._trend_matrix(len(sites), trend)
        if np.linalg.matrix_rank(F) < F.shape[1]:
            raise KrigingError("trend matrix is rank deficient")
        dist = np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(-1))

        beta_ols, *_ = np.linalg.lstsq(F, values, rcond=None)
        resid_var = float(np.var(values - F @ beta_ols))
        diam = float(dist.max())
        if diam <= 0:
            raise DataError("all sites are coincident")

        if resid_var < 1e-14:
            # constant after trend: boundary solution with no spatial part
            self.sill_ = 0.0
            self.range_ = diam / 10.0
            self.nugget_ = 1e-12
            self.sites_ = sites
            self.xy_ = xy
            self.F_ = F
            self.y_ = values
            self._finalize()
            self.reml_report_ = {"converged": True, "boundary": "zero variance"}
            return self

        starts = [
            (resid_var, diam / 4.0, resid_var / 10.0),
            (resid_var, diam / 10.0, resid_var / 10.0),
            (resid_var / 2.0, diam / 25.0, resid_var / 2.0),
            (resid_var, diam / 2.0, resid_var / 100.0),
            (resid_var / 4.0, diam / 50.0, resid_var),
            (2.0 * resid_var, diam / 6.0, resid_var / 1000.0),
        ][: self.n_starts]

        best = None
        trace = []
        for s0, r0, n0 in starts:
            x0 = np.log([max(s0, 1e-12), max(r0, 1e-9), max(n0, 1e-12)])
            res = optimize.minimize(
                self._reml_neg_loglik, x0, args=(dist, F, values),
                method="Nelder-Mead",
                options={"maxiter": self.maxiter, "xatol": 1e-5, "fatol": 1e-7},
            )
            trace.append({"start": [s0, r0, n0], "fun": float(res.fun), "nit": int(res.nit)})
            if best is None or res.fun < best.fun:
                best = res
        if best is None or not np.isfinite(best.fun) or best.fun >= 1e12:
            raise KrigingError("REML optimization failed to find a finite optimum",
                               diagnostics={"starts": trace})

        self.sill_, self.range_, self.nugget_ = np.exp(best.x)
        self.sites_ = sites
        self.xy_ = xy
        self.F_ = F
        self.y_ = values
        self._finalize()
        self.reml_report_ = {"converged": True, "neg_loglik": float(best.fun), "starts": trace}
        return self

    def _finalize(self):
        """Precompute solves shared by every prediction."""
        n = len(self.y_)
        dist = np.sqrt(((self.xy_[:, None, :] - self.xy_[None, :, :]) ** 2).sum(-1))
        cov = self.sill_ * matern_correlation(dist, self.range_, self.smoothness)
        cov[np.diag_indices_from(cov)] += self.nugget_ + 1e-12 * max(self.sill_, 1e-9)
        self._chol = linalg.cho_factor(cov, lower=True)
        ci_f = linalg.cho_solve(self._chol, self.F_)
        self._A = self.F_.T @ ci_f
        self._A_chol = linalg.cho_factor(self._A, lower=True)
        self.beta_ = linalg.cho_solve(self._A_chol, self.F_.T @ linalg.cho_solve(self._chol, self.y_))
        self._resid_weights = linalg.cho_solve(self._chol, self.y_ - self.F_ @ self.beta_)
        self._ci_f = ci_f
        self._n = n

    def predict(self, X, trend=None, return_std: bool = False, return_extrapolation: bool = False):
        """Kriging mean (and prediction sd) at target coordinates.

        Targets far outside the training footprint are flagged, not
        rejected: the prediction falls back towards the trend there.
        """
        targets = check_coords(X, "targets")
        xy_t = self._project(targets)
        f_t = self._trend_matrix(len(targets), trend)
        if f_t.shape[1] != self.F_.shape[1]:
            raise DataError("trend columns at prediction time must match fit time")
        d = np.sqrt(((xy_t[:, None, :] - self.xy_[None, :, :]) ** 2).sum(-1))
        k = self.sill_ * matern_correlation(d, self.range_, self.smoothness)
        mean = f_t @ self.beta_ + k @ self._resid_weights

        out = [mean]
        if return_std:
            ci_k = linalg.cho_solve(self._chol, k.T)           # (n, m)
            var_spatial = self.sill_ + self.nugget_ - np.einsum("ij,ji->i", k, ci_k)
            u = f_t.T - self.F_.T @ ci_k                        # (p, m)
            var_trend = np.einsum("ij,ij->j", u, linalg.cho_solve(self._A_chol, u))
            var = np.maximum(var_spatial + var_trend, 0.0)
            out.append(np.sqrt(var))
        if return_extrapolation:
            lo = self.xy_.min(axis=0) - self.range_
            hi = self.xy_.max(axis=0) + self.range_
            flag = np.any((xy_t < lo) | (xy_t > hi), axis=1)
            out.append(flag)
        return out[0] if len(out) == 1 else tuple(out)

    def loo(self) -> tuple[np.ndarray, np.ndarray]:
        """Exact leave-one-out predictions and variances at the fitted sites.

        Uses the precision-projection identity for universal kriging: with
        P = Cov^-1 - Cov^-1 F (F' Cov^-1 F)^-1 F' Cov^-1, the LOO error at
        site i is (P y)_i / P_ii and the LOO variance is 1 / P_ii.
        """
        ci = linalg.cho_solve(self._chol, np.eye(self._n))
        P = ci - self._ci_f @ linalg.cho_solve(self._A_chol, self._ci_f.T)
        py = P @ self.y_
        pii = np.diag(P)
        loo_pred = self.y_ - py / pii
        loo_var = 1.0 / pii
        return loo_pred, loo_var


__all__ = ["MaternKriging", "matern_correlation", "dedupe_sites"]
