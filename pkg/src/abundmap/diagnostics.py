"""Posterior predictive checks, residuals, and rootogram data.

Replicated datasets are simulated from the fitted model at the observed
design, one per selected posterior draw. For the count model the replicates
keep the thinning offsets, so the test statistics compare the observed
process with replicated observed processes. The p-value for a statistic T
is the fraction of replicates with T(rep) > T(obs); exact ties count one
half.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import expit

from ._seeding import child_rng
from .distributions import sample_hurdle_lognormal_parts, sample_zinb_parts
from .draws import PosteriorDraws
from .estimators import unconstrain_row
from .exceptions import DataError

DEFAULT_STATISTICS = ("positive_mean", "positive_sd", "overdispersion", "max", "zero_fraction")


def _stat_value(name: str, y: np.ndarray) -> float:
    pos = y[y > 0]
    if name == "positive_mean":
        return float(pos.mean()) if len(pos) else np.nan
    if name == "positive_sd":
        return float(pos.std(ddof=1)) if len(pos) > 1 else np.nan
    if name == "overdispersion":
        m = float(y.mean())
        return float(y.var() / m) if m > 0 else np.nan
    if name == "max":
        return float(y.max())
    if name == "zero_fraction":
        return float(np.mean(y == 0))
    raise DataError(f"unknown test statistic '{name}'")


@dataclass
class PppReport:
    p_values: dict
    replicates: int
    skipped: dict = field(default_factory=dict)
    statistics: tuple = DEFAULT_STATISTICS

    def to_dict(self) -> dict:
        return {"p_values": self.p_values, "replicates": self.replicates,
                "skipped": self.skipped, "statistics": list(self.statistics)}


def simulate_replicates(draws: PosteriorDraws, model, kind: str, replicates: int,
                        seed: int = 0) -> np.ndarray:
    """(replicates, n_obs) datasets simulated from evenly spaced draws."""
    n_total = draws.n_draws
    replicates = min(replicates, n_total)
    if replicates < 1:
        raise DataError("need at least one replicate")
    picks = np.unique(np.linspace(0, n_total - 1, replicates).astype(int))
    out = np.empty((len(picks), model.n))
    for r, k in enumerate(picks):
        rng = child_rng(seed, "ppp-replicate", int(k))
        theta = unconstrain_row(model, draws.names, draws.flat()[k])
        if kind == "count":
            eta_p = model._eta_p(theta) + model._gp_eta(theta)
            eta_mu = model._eta_mu(theta) + model.log_pi
            p = expit(eta_p)
            with np.errstate(over="ignore"):
                mu = np.exp(eta_mu)
            out[r] = sample_zinb_parts(p, mu, model._phi_value(theta), rng)
        elif kind == "size":
            eta_p = model._eta_p(theta)
            eta_mu = model._eta_mu(theta)
            p = expit(eta_p)
            sigma = float(np.exp(theta[model.i_log_sigma]))
            out[r] = sample_hurdle_lognormal_parts(p, eta_mu, sigma, rng)
        else:
            raise DataError(f"unknown model kind '{kind}'")
    return out


def ppp(draws: PosteriorDraws, model, kind: str, statistics=DEFAULT_STATISTICS,
        replicates: int = 500, seed: int = 0) -> PppReport:
    """Posterior predictive p-values for the requested test statistics."""
    y = np.asarray(model.y, dtype=float)
    reps = simulate_replicates(draws, model, kind, replicates, seed)
    p_values = {}
    skipped = {}
    for name in statistics:
        obs = _stat_value(name, y)
        if np.isnan(obs):
            p_values[name] = np.nan
            skipped[name] = len(reps)
            continue
        vals = np.array([_stat_value(name, rep) for rep in reps])
        ok = ~np.isnan(vals)
        if not ok.any():
            p_values[name] = np.nan
            skipped[name] = int(len(vals))
            continue
        greater = np.sum(vals[ok] > obs)
        ties = np.sum(vals[ok] == obs)
        p_values[name] = float((greater + 0.5 * ties) / ok.sum())
        skipped[name] = int((~ok).sum())
    return PppReport(p_values=p_values, replicates=len(reps), skipped=skipped,
                     statistics=tuple(statistics))


def count_residuals(draws: PosteriorDraws, model) -> np.ndarray:
    """Observed count minus posterior-mean predicted count, per cell.

    Predictions are for the observed (thinned) process, matching the data.
    """
    flat = draws.flat()
    acc = np.zeros(model.n)
    for k in range(len(flat)):
        theta = unconstrain_row(model, draws.names, flat[k])
        eta_p = model._eta_p(theta) + model._gp_eta(theta)
        eta_mu = model._eta_mu(theta) + model.log_pi
        p = expit(eta_p)
        acc += (1.0 - p) * np.exp(eta_mu)
    return np.asarray(model.y, dtype=float) - acc / len(flat)


def size_cell_residuals(size_draws: PosteriorDraws, marks: pd.DataFrame,
                        cells: pd.DataFrame) -> pd.DataFrame:
    """Average observed mark size per cell minus predicted mean size.

    Cells without any observed mark are excluded (no average size exists).
    marks must carry a cell_id column locating each mark.
    """
    from .predict import predict_sizes, simulate_missing_effects

    if "cell_id" not in marks.columns:
        raise DataError("marks need a cell_id column for cell-level residuals")
    grouped = marks.groupby("cell_id")["size"].mean()
    sub = cells[cells["cell_id"].isin(grouped.index)].reset_index(drop=True)
    if len(sub) == 0:
        return pd.DataFrame(columns=["cell_id", "size_residual"])
    size_draws = simulate_missing_effects(size_draws, sorted(set(sub["district"].astype(str))))
    predicted = predict_sizes(size_draws, sub).mean(axis=0)
    observed = grouped.loc[sub["cell_id"]].to_numpy()
    return pd.DataFrame({"cell_id": sub["cell_id"].to_numpy(),
                         "size_residual": observed - predicted})


def residuals(draws: PosteriorDraws, data, model, kind: str = "count"):
    """Per-unit residuals for either model (see the cell-level helpers)."""
    if kind == "count":
        return count_residuals(draws, model)
    if kind == "size":
        marks, cells = data
        return size_cell_residuals(draws, marks, cells)
    raise DataError(f"unknown model kind '{kind}'")


def rootogram_data(draws: PosteriorDraws, model, kind: str = "count",
                   max_count: int | None = None, replicates: int = 500,
                   seed: int = 0) -> pd.DataFrame:
    """Square-root observed and replicate-expected count frequencies.

    The band is the 2.5/97.5 percent range of replicate frequencies.
    """
    y = np.asarray(model.y)
    if len(y) == 0:
        return pd.DataFrame(columns=["count", "sqrt_observed", "sqrt_expected",
                                     "sqrt_lower", "sqrt_upper"])
    if max_count is None:
        max_count = int(y.max())
    reps = simulate_replicates(draws, model, kind, replicates, seed)
    bins = np.arange(max_count + 2)
    observed = np.histogram(y, bins=bins)[0]
    rep_freqs = np.stack([np.histogram(rep, bins=bins)[0] for rep in reps])
    return pd.DataFrame({
        "count": bins[:-1],
        "sqrt_observed": np.sqrt(observed),
        "sqrt_expected": np.sqrt(rep_freqs.mean(axis=0)),
        "sqrt_lower": np.sqrt(np.quantile(rep_freqs, 0.025, axis=0)),
        "sqrt_upper": np.sqrt(np.quantile(rep_freqs, 0.975, axis=0)),
    })


__all__ = [
    "DEFAULT_STATISTICS",
    "PppReport",
    "ppp",
    "simulate_replicates",
    "count_residuals",
    "size_cell_residuals",
    "residuals",
    "rootogram_data",
]
