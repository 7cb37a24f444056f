"""Posterior densities for the mark-size and occurrence-count models.

Both models are two-part regressions with logit/log links, per-district
random effects, and the priors:

    alpha0 ~ logistic(0, 1)          hurdle / zero-inflation intercept
    alpha1, beta1 ~ flat             covariate coefficients
    beta0 ~ t3(-2, 10)               mean-model intercept
    sigma_size ~ half-t3(0, 10)      (on sd by default; switchable to variance)
    gamma_d ~ N(0, sigma_district^2), district variances flat (on variance)
    phi ~ gamma(0.01, 0.01)          count-model dispersion
    sigma2_gp ~ flat, l_scale ~ inv-gamma(a, b)   spatial term

The count model observes a thinned process: the known per-district
retention probability enters as a log offset on the mean predictor, which
is algebraically identical to multiplying the latent mean by the retention
probability. The spatial random effect enters the zero-inflation predictor
only; the mean predictor never carries it.

Parameters are handled as one unconstrained vector (positives on the log
scale). Flat priors carry a box constraint so the posterior stays proper
on degenerate data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .distributions import (
    gamma_logpdf,
    half_t_logpdf,
    inv_gamma_logpdf,
    logistic_logpdf,
    normal_logpdf,
    student_t_logpdf,
)
from .exceptions import DataError
from .gp_basis import HilbertBasis

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def log_sigmoid(x):
    return -np.logaddexp(0.0, -np.asarray(x, dtype=float))


@dataclass
class ModelConfig:
    """Shared knobs for both models; defaults follow the reference setup."""

    scale_prior_on: str = "sd"                      # sd | variance, for the half-t scale prior
    include_district_effects: bool = True
    flat_bound: float = 1e6
    alpha0_prior: tuple = (0.0, 1.0)                # logistic(loc, scale)
    beta0_prior: tuple = (3.0, -2.0, 10.0)          # t(df, loc, scale)
    sigma_prior: tuple = (3.0, 10.0)                # half-t(df, scale)
    phi_prior: tuple = (0.01, 0.01)                 # gamma(shape, rate)
    lscale_prior: tuple = (0.976289, 0.008892)      # inv-gamma(shape, scale)
    fix_phi: float | None = None
    include_gp: bool = False
    gp_num_basis: int = 5
    gp_boundary_factor: float = 1.25
    gp_layout: str = "per_axis"

    def __post_init__(self):
        if self.scale_prior_on not in ("sd", "variance"):
            raise DataError("scale_prior_on must be 'sd' or 'variance'")


@dataclass
class Block:
    """One Metropolis-within-Gibbs update unit."""

    name: str
    idx: np.ndarray
    target: float                 # acceptance-rate target for adaptation
    scope: tuple                  # ("global",) | ("obs", cells, kind, d) | ("prior", ...) | ("shift", ...)
    adapt_cov: bool = False       # learn a joint proposal covariance during warmup


class _LayoutBuilder:
    def __init__(self):
        self.names: list[str] = []
        self.slices: dict[str, slice] = {}

    def add(self, name: str, labels) -> slice:
        start = len(self.names)
        self.names.extend(labels)
        sl = slice(start, len(self.names))
        self.slices[name] = sl
        return sl

    def scalar(self, name: str) -> int:
        self.add(name, [name])
        return self.slices[name].start


class BaseTwoPartModel:
    """Common layout, priors, and block machinery for both models."""

    def __init__(self, Xp, Xmu, district_idx, district_labels, config: ModelConfig,
                 p_names=(), mu_names=()):
        self.Xp = np.asarray(Xp, dtype=float)
        self.Xmu = np.asarray(Xmu, dtype=float)
        self.n = self.Xp.shape[0]
        self.kp = self.Xp.shape[1]
        self.kmu = self.Xmu.shape[1]
        self.config = config
        self.district_labels = list(district_labels)
        self.n_districts = len(self.district_labels)
        self.district_idx = np.asarray(district_idx, dtype=int)
        self.use_districts = config.include_district_effects and self.n_districts > 1
        self._district_cells = [np.nonzero(self.district_idx == d)[0] for d in range(self.n_districts)]
        self.p_names = list(p_names) if p_names else [f"xp{i}" for i in range(self.kp)]
        self.mu_names = list(mu_names) if mu_names else [f"xmu{i}" for i in range(self.kmu)]

    # -- parameter vector --------------------------------------------------

    def _build_common_layout(self, builder: _LayoutBuilder):
        self.i_alpha0 = builder.scalar("alpha0")
        self.sl_alpha1 = builder.add("alpha1", [f"alpha1[{c}]" for c in self.p_names])
        self.i_beta0 = builder.scalar("beta0")
        self.sl_beta1 = builder.add("beta1", [f"beta1[{c}]" for c in self.mu_names])

    def _build_district_layout(self, builder: _LayoutBuilder):
        if self.use_districts:
            self.sl_gamma_p = builder.add("gamma_p", [f"gamma_p[{d}]" for d in self.district_labels])
            self.sl_gamma_mu = builder.add("gamma_mu", [f"gamma_mu[{d}]" for d in self.district_labels])
            self.i_lsd_p = builder.scalar("log_sigma_district_p")
            self.i_lsd_mu = builder.scalar("log_sigma_district_mu")

    def n_params(self) -> int:
        return len(self.names)

    def init_point(self) -> np.ndarray:
        # fixed effects at zero, scales at one, coefficients at zero
        return np.zeros(self.n_params())

    # -- linear predictors ---------------------------------------------------

    def _eta_p(self, theta, idx=None):
        sub = slice(None) if idx is None else idx
        eta = theta[self.i_alpha0] + self.Xp[sub] @ theta[self.sl_alpha1]
        if self.use_districts:
            eta = eta + theta[self.sl_gamma_p][self.district_idx[sub]]
        return eta

    def _eta_mu(self, theta, idx=None):
        sub = slice(None) if idx is None else idx
        eta = theta[self.i_beta0] + self.Xmu[sub] @ theta[self.sl_beta1]
        if self.use_districts:
            eta = eta + theta[self.sl_gamma_mu][self.district_idx[sub]]
        return eta

    # -- priors ---------------------------------------------------------------

    def _box_ok(self, theta) -> bool:
        return bool(np.all(np.abs(theta) <= np.log(self.config.flat_bound) + 20.0) and
                    np.all(np.isfinite(theta)))

    def _flat_coord_prior(self, value) -> float:
        return 0.0 if abs(value) <= self.config.flat_bound else -np.inf

    def _scale_prior_unconstrained(self, u: float) -> float:
        """half-t prior for a scale parameter sampled as u = log(sd)."""
        df, scale = self.config.sigma_prior
        sd = np.exp(u)
        if self.config.scale_prior_on == "sd":
            return float(half_t_logpdf(sd, df, scale)) + u
        return float(half_t_logpdf(sd * sd, df, scale)) + np.log(2.0) + 2.0 * u

    def _flat_variance_prior_unconstrained(self, u: float) -> float:
        """Flat prior on a variance, sampled as u = log(sd)."""
        var = np.exp(2.0 * u)
        if var > self.config.flat_bound:
            return -np.inf
        return np.log(2.0) + 2.0 * u

    def _district_prior(self, theta, which: str) -> float:
        if not self.use_districts:
            return 0.0
        if which == "p":
            gam = theta[self.sl_gamma_p]
            sd = np.exp(theta[self.i_lsd_p])
        else:
            gam = theta[self.sl_gamma_mu]
            sd = np.exp(theta[self.i_lsd_mu])
        return float(np.sum(normal_logpdf(gam, 0.0, sd)))

    # -- generic block helpers -------------------------------------------------

    def make_blocks(self) -> list[Block]:
        blocks = [
            Block("alpha0", np.array([self.i_alpha0]), 0.44, ("global",)),
        ]
        for j in range(self.kp):
            blocks.append(Block(f"alpha1_{j}", np.array([self.sl_alpha1.start + j]), 0.44, ("global",)))
        blocks.append(Block("beta0", np.array([self.i_beta0]), 0.44, ("global",)))
        for j in range(self.kmu):
            blocks.append(Block(f"beta1_{j}", np.array([self.sl_beta1.start + j]), 0.44, ("global",)))
        blocks.extend(self._extra_global_blocks())
        if self.use_districts:
            for d in range(self.n_districts):
                blocks.append(Block(f"gamma_p_{d}", np.array([self.sl_gamma_p.start + d]), 0.44,
                                    ("obs", self._district_cells[d], "gamma_p", d)))
            for d in range(self.n_districts):
                blocks.append(Block(f"gamma_mu_{d}", np.array([self.sl_gamma_mu.start + d]), 0.44,
                                    ("obs", self._district_cells[d], "gamma_mu", d)))
            blocks.append(Block("log_sigma_district_p", np.array([self.i_lsd_p]), 0.44, ("prior", "p")))
            blocks.append(Block("log_sigma_district_mu", np.array([self.i_lsd_mu]), 0.44, ("prior", "mu")))
            # recentering moves: slide the intercept against all district
            # effects at once; the likelihood is invariant along this ridge,
            # so only the priors enter the ratio
            gp_idx = np.arange(self.sl_gamma_p.start, self.sl_gamma_p.stop)
            gmu_idx = np.arange(self.sl_gamma_mu.start, self.sl_gamma_mu.stop)
            blocks.append(Block("shift_p", np.array([self.i_alpha0]), 0.44,
                                ("shift", "p", gp_idx)))
            blocks.append(Block("shift_mu", np.array([self.i_beta0]), 0.44,
                                ("shift", "mu", gmu_idx)))
            # funnel moves: rescale the district scale and every effect
            # together (multiplicative group move with Jacobian correction)
            blocks.append(Block("scale_p", np.array([self.i_lsd_p]), 0.44,
                                ("scale", "p", gp_idx)))
            blocks.append(Block("scale_mu", np.array([self.i_lsd_mu]), 0.44,
                                ("scale", "mu", gmu_idx)))
        return blocks

    def _extra_global_blocks(self) -> list[Block]:
        return []

    def block_prior(self, theta, block: Block) -> float:
        """Posterior terms involving the block's coordinates, data part excluded."""
        scope = block.scope[0]
        if scope == "obs":
            _, _, kind, d = block.scope
            sd = np.exp(theta[self.i_lsd_p if kind == "gamma_p" else self.i_lsd_mu])
            gam = theta[block.idx[0]]
            return float(normal_logpdf(gam, 0.0, sd))
        if scope in ("prior", "scale"):
            which = block.scope[1]
            u = theta[self.i_lsd_p if which == "p" else self.i_lsd_mu]
            return self._district_prior(theta, which) + self._flat_variance_prior_unconstrained(u)
        if scope == "shift":
            which = block.scope[1]
            if which == "p":
                loc, scale = self.config.alpha0_prior
                intercept = float(logistic_logpdf(theta[self.i_alpha0], loc, scale))
            else:
                df, loc, scale = self.config.beta0_prior
                intercept = float(student_t_logpdf(theta[self.i_beta0], df, loc, scale))
            return intercept + self._district_prior(theta, which)
        return self._global_block_prior(theta, block)

    def _global_block_prior(self, theta, block: Block) -> float:
        name = block.name
        if name == "alpha0":
            loc, scale = self.config.alpha0_prior
            return float(logistic_logpdf(theta[self.i_alpha0], loc, scale))
        if name == "beta0":
            df, loc, scale = self.config.beta0_prior
            return float(student_t_logpdf(theta[self.i_beta0], df, loc, scale))
        if name.startswith("alpha1") or name.startswith("beta1"):
            return self._flat_coord_prior(theta[block.idx[0]])
        raise KeyError(f"no prior rule for block {name}")

    # -- full posterior (used by tests and for reference) -----------------------

    def log_prior_unconstrained(self, theta) -> float:
        if not self._box_ok(theta):
            return -np.inf
        loc, scale = self.config.alpha0_prior
        total = float(logistic_logpdf(theta[self.i_alpha0], loc, scale))
        df, bloc, bscale = self.config.beta0_prior
        total += float(student_t_logpdf(theta[self.i_beta0], df, bloc, bscale))
        for j in range(self.kp):
            total += self._flat_coord_prior(theta[self.sl_alpha1.start + j])
        for j in range(self.kmu):
            total += self._flat_coord_prior(theta[self.sl_beta1.start + j])
        if self.use_districts:
            total += self._district_prior(theta, "p") + self._district_prior(theta, "mu")
            total += self._flat_variance_prior_unconstrained(theta[self.i_lsd_p])
            total += self._flat_variance_prior_unconstrained(theta[self.i_lsd_mu])
        total += self._extra_prior_unconstrained(theta)
        return total

    def _extra_prior_unconstrained(self, theta) -> float:
        return 0.0

    def logpost(self, theta) -> float:
        lp = self.log_prior_unconstrained(theta)
        if not np.isfinite(lp):
            return -np.inf
        return lp + float(np.sum(self.cell_loglik(theta)))

    # subclasses implement cell_loglik(theta, idx=None) -> per-observation vector


class SizeModel(BaseTwoPartModel):
    """Hurdle log-normal regression for mark sizes.

    P(zero) through a logit link; log of a positive mark is normal with
    mean equal to the mu-predictor and a shared scale.
    """

    def __init__(self, y, Xp, Xmu, district_idx, district_labels, config: ModelConfig,
                 p_names=(), mu_names=()):
        super().__init__(Xp, Xmu, district_idx, district_labels, config, p_names, mu_names)
        y = np.asarray(y, dtype=float)
        if np.any(y < 0) or not np.all(np.isfinite(y)):
            raise DataError("mark values must be finite and non-negative")
        self.y = y
        self.zero = y == 0
        self.pos = ~self.zero
        with np.errstate(divide="ignore"):
            self.log_y = np.where(self.pos, np.log(np.where(self.pos, y, 1.0)), 0.0)

        builder = _LayoutBuilder()
        self._build_common_layout(builder)
        self.i_log_sigma = builder.scalar("log_sigma")
        self._build_district_layout(builder)
        self.names = builder.names
        self.slices = builder.slices

    def _extra_global_blocks(self):
        return [Block("log_sigma", np.array([self.i_log_sigma]), 0.44, ("global",))]

    def _global_block_prior(self, theta, block: Block) -> float:
        if block.name == "log_sigma":
            return self._scale_prior_unconstrained(theta[self.i_log_sigma])
        return super()._global_block_prior(theta, block)

    def _extra_prior_unconstrained(self, theta) -> float:
        return self._scale_prior_unconstrained(theta[self.i_log_sigma])

    def cell_loglik(self, theta, idx=None) -> np.ndarray:
        sub = slice(None) if idx is None else idx
        eta_p = self._eta_p(theta, idx)
        eta_mu = self._eta_mu(theta, idx)
        sigma = np.exp(theta[self.i_log_sigma])
        zero = self.zero[sub]
        log_y = self.log_y[sub]
        z = (log_y - eta_mu) / sigma
        pos_ll = log_sigmoid(-eta_p) - log_y - np.log(sigma) - _LOG_SQRT_2PI - 0.5 * z * z
        return np.where(zero, log_sigmoid(eta_p), pos_ll)

    def to_constrained(self, theta_matrix) -> np.ndarray:
        out = np.array(theta_matrix, dtype=float, copy=True)
        out[..., self.i_log_sigma] = np.exp(out[..., self.i_log_sigma])
        if self.use_districts:
            out[..., self.i_lsd_p] = np.exp(out[..., self.i_lsd_p])
            out[..., self.i_lsd_mu] = np.exp(out[..., self.i_lsd_mu])
        return out

    def constrained_names(self) -> list[str]:
        names = list(self.names)
        names[self.i_log_sigma] = "sigma_size"
        if self.use_districts:
            names[self.i_lsd_p] = "sigma_district_p"
            names[self.i_lsd_mu] = "sigma_district_mu"
        return names

    def log_prior_constrained(self, theta_c) -> float:
        """Stated priors on the constrained scale; flat coordinates add zero."""
        loc, scale = self.config.alpha0_prior
        total = float(logistic_logpdf(theta_c[self.i_alpha0], loc, scale))
        df, bloc, bscale = self.config.beta0_prior
        total += float(student_t_logpdf(theta_c[self.i_beta0], df, bloc, bscale))
        sdf, sscale = self.config.sigma_prior
        sigma = theta_c[self.i_log_sigma]
        if self.config.scale_prior_on == "sd":
            total += float(half_t_logpdf(sigma, sdf, sscale))
        else:
            total += float(half_t_logpdf(sigma**2, sdf, sscale))
        if self.use_districts:
            sd_p = theta_c[self.i_lsd_p]
            sd_mu = theta_c[self.i_lsd_mu]
            total += float(np.sum(normal_logpdf(theta_c[self.sl_gamma_p], 0.0, sd_p)))
            total += float(np.sum(normal_logpdf(theta_c[self.sl_gamma_mu], 0.0, sd_mu)))
        return total


class CountModel(BaseTwoPartModel):
    """Zero-inflated negative binomial regression for thinned cell counts.

    The retention probability of each cell's district enters as a log
    offset on the mean predictor. The optional low-rank spatial term is
    added to the zero-inflation predictor only.
    """

    def __init__(self, y, Xp, Xmu, district_idx, district_labels, log_pi, config: ModelConfig,
                 coords=None, p_names=(), mu_names=(), gp_basis: HilbertBasis | None = None):
        super().__init__(Xp, Xmu, district_idx, district_labels, config, p_names, mu_names)
        y = np.asarray(y)
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise DataError("counts must be non-negative integers")
        self.y = y.astype(np.int64)
        log_pi = np.asarray(log_pi, dtype=float)
        if np.any(~np.isfinite(log_pi)) or np.any(log_pi > 0):
            bad = self.y[~np.isfinite(log_pi)] if np.any(~np.isfinite(log_pi)) else None
            if bad is not None and np.any(bad > 0):
                raise DataError("a cell with observed count > 0 has retention probability 0")
            raise DataError("log retention offsets must be finite and <= 0")
        self.log_pi = log_pi
        self.zero = self.y == 0
        self.pos = ~self.zero
        self.lgamma_y1 = gammaln(self.y + 1.0)

        self.gp_basis = None
        self.Phi = None
        if config.include_gp:
            if gp_basis is not None:
                self.gp_basis = gp_basis
            else:
                if coords is None:
                    raise DataError("include_gp requires cell coordinates")
                self.gp_basis = HilbertBasis(coords, config.gp_num_basis,
                                             config.gp_boundary_factor, config.gp_layout)
            if coords is None:
                raise DataError("include_gp requires cell coordinates")
            self.Phi = self.gp_basis.features(coords)

        builder = _LayoutBuilder()
        self._build_common_layout(builder)
        if config.fix_phi is None:
            self.i_log_phi = builder.scalar("log_phi")
        else:
            self.i_log_phi = None
        self._build_district_layout(builder)
        if self.gp_basis is not None:
            # centered coefficients: w_j ~ N(0, S_j(sigma2, l)); the flat
            # prior on sigma2_gp then has an integrable sigma^-M tail,
            # which the non-centered form lacks
            self.sl_w = builder.add("gp_w", [f"gp_w[{j}]" for j in range(1, self.gp_basis.n_features + 1)])
            self.i_log_sgp = builder.scalar("log_sigma_gp")
            self.i_log_l = builder.scalar("log_l_scale")
        self.names = builder.names
        self.slices = builder.slices

    # structural guarantee: the spatial term exists for the zero-inflation
    # predictor only; there is no code path adding it to the mean predictor
    def _gp_eta(self, theta, idx=None):
        if self.gp_basis is None:
            return 0.0
        phi = self.Phi if idx is None else self.Phi[idx]
        return phi @ theta[self.sl_w]

    def _gp_coef_prior(self, theta) -> float:
        """N(0, S_j) prior of the basis coefficients given (sigma2, l)."""
        sigma2 = np.exp(2.0 * theta[self.i_log_sgp])
        l_scale = np.exp(theta[self.i_log_l])
        s = self.gp_basis.spectral_weights(max(sigma2, 1e-300), l_scale)
        return float(np.sum(normal_logpdf(theta[self.sl_w], 0.0, np.sqrt(np.maximum(s, 1e-300)))))

    def _phi_value(self, theta) -> float:
        if self.config.fix_phi is not None:
            return float(self.config.fix_phi)
        return float(np.exp(theta[self.i_log_phi]))

    def _extra_global_blocks(self):
        blocks = []
        if self.i_log_phi is not None:
            blocks.append(Block("log_phi", np.array([self.i_log_phi]), 0.44, ("global",)))
            # the zero-inflation level, mean level, and dispersion trade off
            # along a ridge (excess zeros vs NB zeros); a joint move with a
            # learned covariance travels it far faster than scalar updates
            blocks.append(Block("core_joint", np.array([self.i_alpha0, self.i_beta0, self.i_log_phi]),
                                0.234, ("global",), adapt_cov=True))
        else:
            blocks.append(Block("core_joint", np.array([self.i_alpha0, self.i_beta0]),
                                0.234, ("global",), adapt_cov=True))
        if self.gp_basis is not None:
            w_idx = np.arange(self.sl_w.start, self.sl_w.stop)
            for g, chunk in enumerate(np.array_split(w_idx, max(1, len(w_idx) // 5))):
                target = 0.44 if len(chunk) == 1 else 0.234
                blocks.append(Block(f"gp_w_{g}", chunk, target, ("global",)))
            # the coefficients fix the field, so the scale and length scale
            # move against the coefficient prior alone
            blocks.append(Block("log_sigma_gp", np.array([self.i_log_sgp]), 0.44, ("prior", "gp")))
            blocks.append(Block("log_l_scale", np.array([self.i_log_l]), 0.44, ("prior", "gp_l")))
            blocks.append(Block("scale_gp", np.array([self.i_log_sgp]), 0.44,
                                ("scale", "gp", w_idx)))
        return blocks

    def block_prior(self, theta, block: Block) -> float:
        scope = block.scope[0]
        if scope in ("prior", "scale") and block.scope[1] in ("gp", "gp_l"):
            total = self._gp_coef_prior(theta)
            if block.scope[1] == "gp_l":
                a, b = self.config.lscale_prior
                u = theta[self.i_log_l]
                total += float(inv_gamma_logpdf(np.exp(u), a, b)) + u
            else:
                total += self._flat_variance_prior_unconstrained(theta[self.i_log_sgp])
            return total
        return super().block_prior(theta, block)

    def _global_block_prior(self, theta, block: Block) -> float:
        name = block.name
        if name == "log_phi":
            shape, rate = self.config.phi_prior
            u = theta[self.i_log_phi]
            return float(gamma_logpdf(np.exp(u), shape, rate)) + u
        if name.startswith("gp_w_"):
            return self._gp_coef_prior(theta)
        if name == "core_joint":
            loc, scale = self.config.alpha0_prior
            total = float(logistic_logpdf(theta[self.i_alpha0], loc, scale))
            df, bloc, bscale = self.config.beta0_prior
            total += float(student_t_logpdf(theta[self.i_beta0], df, bloc, bscale))
            if self.i_log_phi is not None:
                shape, rate = self.config.phi_prior
                u = theta[self.i_log_phi]
                total += float(gamma_logpdf(np.exp(u), shape, rate)) + u
            return total
        return super()._global_block_prior(theta, block)

    def _extra_prior_unconstrained(self, theta) -> float:
        total = 0.0
        if self.i_log_phi is not None:
            shape, rate = self.config.phi_prior
            u = theta[self.i_log_phi]
            total += float(gamma_logpdf(np.exp(u), shape, rate)) + u
        if self.gp_basis is not None:
            total += self._gp_coef_prior(theta)
            total += self._flat_variance_prior_unconstrained(theta[self.i_log_sgp])
            a, b = self.config.lscale_prior
            u = theta[self.i_log_l]
            total += float(inv_gamma_logpdf(np.exp(u), a, b)) + u
        return total

    def cell_loglik(self, theta, idx=None) -> np.ndarray:
        sub = slice(None) if idx is None else idx
        eta_p = self._eta_p(theta, idx) + self._gp_eta(theta, idx)
        eta_mu = self._eta_mu(theta, idx) + self.log_pi[sub]
        phi = self._phi_value(theta)
        y = self.y[sub]
        zero = self.zero[sub]

        log_phi = np.log(phi)
        log_mu_phi = np.logaddexp(eta_mu, log_phi)
        log_nb0 = phi * (log_phi - log_mu_phi)
        log_p = log_sigmoid(eta_p)
        log_1mp = log_sigmoid(-eta_p)
        zero_ll = np.logaddexp(log_p, log_1mp + log_nb0)
        pos_ll = (
            log_1mp
            + gammaln(y + phi)
            - gammaln(phi)
            - self.lgamma_y1[sub]
            + y * (eta_mu - log_mu_phi)
            + phi * (log_phi - log_mu_phi)
        )
        return np.where(zero, zero_ll, pos_ll)

    def cell_loglik_thinned_mean(self, theta, pi_values) -> np.ndarray:
        """Same likelihood with the retention applied as a mean multiplier.

        Used to check the offset identity: the latent mean is exp(eta)
        without the offset and the observed mean is pi * exp(eta) fed to
        the generic kernel.
        """
        from .distributions import zinb_logpmf_parts
        from scipy.special import expit

        eta_p = self._eta_p(theta) + self._gp_eta(theta)
        eta_mu = self._eta_mu(theta)  # no offset
        mu = np.asarray(pi_values, dtype=float) * np.exp(eta_mu)
        return zinb_logpmf_parts(self.y, expit(eta_p), mu, self._phi_value(theta))

    def to_constrained(self, theta_matrix) -> np.ndarray:
        out = np.array(theta_matrix, dtype=float, copy=True)
        if self.i_log_phi is not None:
            out[..., self.i_log_phi] = np.exp(out[..., self.i_log_phi])
        if self.use_districts:
            out[..., self.i_lsd_p] = np.exp(out[..., self.i_lsd_p])
            out[..., self.i_lsd_mu] = np.exp(out[..., self.i_lsd_mu])
        if self.gp_basis is not None:
            out[..., self.i_log_sgp] = np.exp(2.0 * out[..., self.i_log_sgp])
            out[..., self.i_log_l] = np.exp(out[..., self.i_log_l])
        return out

    def constrained_names(self) -> list[str]:
        names = list(self.names)
        if self.i_log_phi is not None:
            names[self.i_log_phi] = "phi"
        if self.use_districts:
            names[self.i_lsd_p] = "sigma_district_p"
            names[self.i_lsd_mu] = "sigma_district_mu"
        if self.gp_basis is not None:
            names[self.i_log_sgp] = "sigma2_gp"
            names[self.i_log_l] = "l_scale"
        return names

    def log_prior_constrained(self, theta_c) -> float:
        """Stated priors on the constrained scale; flat coordinates add zero."""
        loc, scale = self.config.alpha0_prior
        total = float(logistic_logpdf(theta_c[self.i_alpha0], loc, scale))
        df, bloc, bscale = self.config.beta0_prior
        total += float(student_t_logpdf(theta_c[self.i_beta0], df, bloc, bscale))
        if self.i_log_phi is not None:
            shape, rate = self.config.phi_prior
            total += float(gamma_logpdf(theta_c[self.i_log_phi], shape, rate))
        if self.use_districts:
            sd_p = theta_c[self.i_lsd_p]
            sd_mu = theta_c[self.i_lsd_mu]
            total += float(np.sum(normal_logpdf(theta_c[self.sl_gamma_p], 0.0, sd_p)))
            total += float(np.sum(normal_logpdf(theta_c[self.sl_gamma_mu], 0.0, sd_mu)))
        if self.gp_basis is not None:
            s = self.gp_basis.spectral_weights(max(theta_c[self.i_log_sgp], 1e-300),
                                               theta_c[self.i_log_l])
            total += float(np.sum(normal_logpdf(theta_c[self.sl_w], 0.0,
                                                np.sqrt(np.maximum(s, 1e-300)))))
            a, b = self.config.lscale_prior
            total += float(inv_gamma_logpdf(theta_c[self.i_log_l], a, b))
        return total


__all__ = ["ModelConfig", "Block", "SizeModel", "CountModel", "log_sigmoid"]
