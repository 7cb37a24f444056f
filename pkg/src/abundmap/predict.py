"""Posterior prediction, district calibration, and aggregation.

Prediction removes the thinning offset (retention set to one), so counts
refer to the latent process. For districts with a known total count, every
posterior draw is rescaled so its district sum matches the total exactly;
the scaling factor lambda is kept per draw and district. Districts without
known totals pass through uncalibrated. District random effects that were
not estimated (districts absent from fitting) are simulated from each
draw's district-variance parameter first.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import expit

from ._seeding import child_rng
from .distributions import hurdle_lognormal_mean_parts
from .draws import PosteriorDraws
from .exceptions import CalibrationError, DataError
from .gp_basis import HilbertBasis
from .validation import Standardizer, check_columns, check_covariates

logger = logging.getLogger(__name__)


def _design_matrix(cells: pd.DataFrame, names, scaler: Standardizer) -> np.ndarray:
    check_covariates(cells, names, "cells")
    return scaler.transform(cells, names)


def _gamma_matrix(draws: PosteriorDraws, kind: str, districts) -> np.ndarray:
    """Per-draw district effect for each cell's district (zeros if absent)."""
    flat = draws.flat()
    n_draws = len(flat)
    out = np.zeros((n_draws, len(districts)))
    names = set(draws.names)
    for j, lab in enumerate(districts):
        col = f"gamma_{kind}[{lab}]"
        if col in names:
            out[:, j] = draws.col(col)
        else:
            raise DataError(
                f"district '{lab}' has no {col} in the draws; run simulate_missing_effects first"
            )
    return out


def linear_predictors(draws: PosteriorDraws, cells: pd.DataFrame,
                      include_gp: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Per-draw, per-cell (eta_p, eta_mu) with no thinning offset."""
    meta = draws.meta
    scaler = Standardizer.from_dict(meta["scaler"])
    Xp = _design_matrix(cells, meta["p_covariates"], scaler)
    Xmu = _design_matrix(cells, meta["mu_covariates"], scaler)
    flat = draws.flat()
    n_draws = len(flat)

    alpha0 = draws.col("alpha0")
    beta0 = draws.col("beta0")
    a1_names = [f"alpha1[{c}]" for c in meta["p_covariates"]]
    b1_names = [f"beta1[{c}]" for c in meta["mu_covariates"]]
    A1 = np.column_stack([draws.col(n) for n in a1_names]) if a1_names else np.zeros((n_draws, 0))
    B1 = np.column_stack([draws.col(n) for n in b1_names]) if b1_names else np.zeros((n_draws, 0))

    eta_p = alpha0[:, None] + A1 @ Xp.T
    eta_mu = beta0[:, None] + B1 @ Xmu.T

    cell_districts = cells["district"].astype(str).tolist()
    if meta.get("include_district_effects"):
        uniq = sorted(set(cell_districts))
        gp = _gamma_matrix(draws, "p", uniq)
        gmu = _gamma_matrix(draws, "mu", uniq)
        pos = np.array([uniq.index(d) for d in cell_districts])
        eta_p = eta_p + gp[:, pos]
        eta_mu = eta_mu + gmu[:, pos]

    if include_gp and meta.get("gp_basis"):
        basis = HilbertBasis.from_dict(meta["gp_basis"])
        phi = basis.features(cells[["lon", "lat"]].to_numpy(dtype=float))
        _, w = draws.cols("gp_w[")
        eta_p = eta_p + w @ phi.T

    return eta_p, eta_mu


def predict_counts(draws: PosteriorDraws, cells: pd.DataFrame, mode: str = "expected",
                   seed: int = 0) -> np.ndarray:
    """Per-draw cell counts with retention set to one.

    expected: (1 - p) * mu. sampled: one zero-inflated NB draw per draw
    and cell, deterministic given seed.
    """
    if draws.meta.get("model") != "count":
        raise DataError("predict_counts needs count-model draws")
    eta_p, eta_mu = linear_predictors(draws, cells)
    p = expit(eta_p)
    mu = np.exp(eta_mu)
    if mode == "expected":
        return (1.0 - p) * mu
    if mode == "sampled":
        rng = child_rng(seed, "predict-counts")
        if draws.meta.get("fix_phi") is not None:
            phi = np.full(len(draws.flat()), float(draws.meta["fix_phi"]))
        else:
            phi = draws.col("phi")
        excess = rng.random(p.shape) < p
        with np.errstate(invalid="ignore", over="ignore"):
            lam = rng.gamma(shape=phi[:, None], scale=mu / phi[:, None])
        lam = np.where(excess, 0.0, np.minimum(lam, 1e15))
        lam = np.nan_to_num(lam, nan=1e15, posinf=1e15)
        counts = rng.poisson(lam).astype(float)
        counts[excess] = 0.0
        return counts
    raise DataError(f"unknown prediction mode '{mode}'")


def predict_sizes(draws: PosteriorDraws, cells: pd.DataFrame) -> np.ndarray:
    """Per-draw mean mark size per cell (hurdle log-normal mean)."""
    if draws.meta.get("model") != "size":
        raise DataError("predict_sizes needs size-model draws")
    eta_p, eta_mu = linear_predictors(draws, cells)
    p = expit(eta_p)
    sigma = draws.col("sigma_size")
    return hurdle_lognormal_mean_parts(p, eta_mu, sigma[:, None])


def simulate_missing_effects(draws: PosteriorDraws, districts, seed: int = 0) -> PosteriorDraws:
    """Append simulated district effects for districts absent from the fit.

    For each posterior draw, a missing district's effect is N(0, v) with v
    that draw's district variance; models fitted without district effects
    get exact zeros. Already-present districts are left untouched.
    """
    meta = dict(draws.meta)
    fitted = set(meta.get("districts", []))
    todo = [d for d in dict.fromkeys(str(x) for x in districts) if d not in fitted]
    if not todo:
        return draws
    chains, kept, _ = draws.draws.shape
    have_effects = meta.get("include_district_effects", False)

    new_cols = []
    new_names = []
    for kind, sd_col in (("p", "sigma_district_p"), ("mu", "sigma_district_mu")):
        if have_effects:
            sd = draws.col(sd_col)
        else:
            sd = np.zeros(chains * kept)
        for j, lab in enumerate(todo):
            rng = child_rng(seed, f"simulated-effect-{kind}-{lab}")
            new_cols.append(sd * rng.standard_normal(chains * kept))
            new_names.append(f"gamma_{kind}[{lab}]")

    flat = draws.flat()
    widened = np.column_stack([flat] + new_cols)
    tensor = widened.reshape(chains, kept, -1)
    meta["districts"] = sorted(fitted | set(todo))
    meta["simulated_districts"] = sorted(set(meta.get("simulated_districts", [])) | set(todo))
    return PosteriorDraws(tensor, list(draws.names) + new_names, meta, draws.diagnostics)


@dataclass
class PredictionSet:
    """Per-draw cell predictions plus calibration output."""

    cell_ids: np.ndarray
    districts: np.ndarray
    counts: np.ndarray                       # (draws, cells) pre-calibration
    counts_calibrated: np.ndarray | None = None
    lam: pd.DataFrame | None = None          # long format: draw, district, lam
    sizes: np.ndarray | None = None
    abundance: np.ndarray | None = None
    flagged_draws: dict = field(default_factory=dict)


def calibrate(pred: PredictionSet, known_totals: dict) -> PredictionSet:
    """Rescale each draw so calibrated district sums match known totals.

    known_totals maps district label to its known count; districts not in
    the map pass through unchanged. A draw whose predicted district sum is
    zero against a positive total is flagged and left uncalibrated.
    """
    counts = pred.counts_calibrated if pred.counts_calibrated is not None else pred.counts
    out = counts.copy()
    n_draws = counts.shape[0]
    lam_rows = []
    flagged = {}
    for lab, total in known_totals.items():
        total = float(total)
        if not np.isfinite(total):
            continue
        mask = pred.districts == lab
        if not mask.any():
            logger.warning("known total for district '%s' matches no predicted cells", lab)
            continue
        sums = counts[:, mask].sum(axis=1)
        lam = np.where(sums > 0, total / np.where(sums > 0, sums, 1.0), np.nan)
        bad = ~np.isfinite(lam)
        if bad.any():
            if total > 0:
                flagged[lab] = np.nonzero(bad)[0].tolist()
                logger.warning(
                    "district '%s': %d draw(s) have zero predicted mass against total %.0f; flagged",
                    lab, int(bad.sum()), total,
                )
            else:
                lam[bad] = 1.0  # zero predicted, zero known: already matched
        good = np.isfinite(lam)
        if not good.any():
            raise CalibrationError(
                f"district '{lab}': every draw predicts zero mass against a positive total"
            )
        out[np.ix_(good, np.nonzero(mask)[0])] = counts[np.ix_(good, np.nonzero(mask)[0])] * lam[good, None]
        lam_rows.append(pd.DataFrame({"draw": np.arange(n_draws), "district": lab, "lam": lam}))
    lam_frame = pd.concat(lam_rows, ignore_index=True) if lam_rows else None
    return PredictionSet(
        cell_ids=pred.cell_ids, districts=pred.districts, counts=pred.counts,
        counts_calibrated=out, lam=lam_frame, sizes=pred.sizes,
        abundance=pred.abundance, flagged_draws=flagged,
    )


def aggregate(values: np.ndarray, regions, quantiles=(0.025, 0.25, 0.5, 0.75, 0.975)) -> pd.DataFrame:
    """Across-draw summaries of per-region sums.

    values is (draws, cells); regions maps each cell to one region label.
    Regions with no cells report zero and are flagged.
    """
    regions = np.asarray([str(r) for r in regions])
    if values.shape[1] != len(regions):
        raise DataError("region labels must match prediction cells")
    labels = sorted(set(regions))
    rows = []
    for lab in labels:
        mask = regions == lab
        sums = values[:, mask].sum(axis=1)
        row = {"region": lab, "mean": float(sums.mean()), "sd": float(sums.std()),
               "empty": bool(~mask.any())}
        for q in quantiles:
            row[f"q{100 * q:g}"] = float(np.quantile(sums, q))
        rows.append(row)
    return pd.DataFrame(rows)


def predict_pipeline(count_draws: PosteriorDraws, size_draws: PosteriorDraws | None,
                     cells: pd.DataFrame, districts: pd.DataFrame | None = None,
                     mode: str = "expected", seed: int = 0) -> PredictionSet:
    """Counts, optional sizes and abundance, with missing-effect simulation
    and district calibration, in the documented order."""
    check_columns(cells, ["cell_id", "lon", "lat", "district"], "cells")
    all_districts = sorted(set(cells["district"].astype(str)))
    count_draws = simulate_missing_effects(count_draws, all_districts, seed=seed)
    counts = predict_counts(count_draws, cells, mode=mode, seed=seed)
    pred = PredictionSet(
        cell_ids=cells["cell_id"].to_numpy(),
        districts=cells["district"].astype(str).to_numpy(),
        counts=counts,
    )

    known = {}
    if districts is not None and "known_total" in districts.columns:
        for _, row in districts.iterrows():
            tot = row["known_total"]
            if pd.notna(tot):
                known[str(row["district"])] = float(tot)
    pred = calibrate(pred, known) if known else pred
    if pred.counts_calibrated is None:
        pred.counts_calibrated = pred.counts.copy()

    if size_draws is not None:
        size_draws = simulate_missing_effects(size_draws, all_districts, seed=seed + 1)
        sizes = predict_sizes(size_draws, cells)
        n = min(sizes.shape[0], pred.counts_calibrated.shape[0])
        if sizes.shape[0] != pred.counts_calibrated.shape[0]:
            logger.warning("count and size draws differ (%d vs %d); pairing the first %d",
                           pred.counts_calibrated.shape[0], sizes.shape[0], n)
        pred.sizes = sizes[:n]
        pred.abundance = pred.counts_calibrated[:n] * sizes[:n]
    return pred


def summarize_cells(values: np.ndarray, cell_ids,
                    quantiles=(0.025, 0.5, 0.975)) -> pd.DataFrame:
    """Per-cell posterior mean, sd, and quantiles from (draws, cells) values."""
    frame = {"cell_id": np.asarray(cell_ids),
             "mean": values.mean(axis=0), "sd": values.std(axis=0)}
    for q in quantiles:
        frame[f"q{100 * q:g}"] = np.quantile(values, q, axis=0)
    return pd.DataFrame(frame)


def lambda_summary(pred: PredictionSet) -> pd.DataFrame:
    """District-level summary of calibration factors."""
    if pred.lam is None:
        return pd.DataFrame(columns=["district", "lambda_mean", "lambda_q2.5", "lambda_q97.5"])
    rows = []
    for lab, grp in pred.lam.groupby("district", sort=True):
        lam = grp["lam"].to_numpy()
        ok = np.isfinite(lam)
        rows.append({
            "district": lab,
            "lambda_mean": float(lam[ok].mean()) if ok.any() else np.nan,
            "lambda_q2.5": float(np.quantile(lam[ok], 0.025)) if ok.any() else np.nan,
            "lambda_q97.5": float(np.quantile(lam[ok], 0.975)) if ok.any() else np.nan,
        })
    return pd.DataFrame(rows)


def coarsen_regions(cells: pd.DataFrame, factor: int) -> np.ndarray:
    """Group grid cells into factor x factor blocks for coarse reporting."""
    if factor < 1:
        raise DataError("coarsening factor must be >= 1")
    lons = np.sort(np.unique(cells["lon"].to_numpy()))
    lats = np.sort(np.unique(cells["lat"].to_numpy()))
    dlon = float(np.min(np.diff(lons))) if len(lons) > 1 else 1.0
    dlat = float(np.min(np.diff(lats))) if len(lats) > 1 else 1.0
    col = np.floor((cells["lon"].to_numpy() - lons[0]) / dlon + 0.5).astype(int) // factor
    row = np.floor((cells["lat"].to_numpy() - lats[0]) / dlat + 0.5).astype(int) // factor
    return np.array([f"block_r{r}_c{c}" for r, c in zip(row, col)])


__all__ = [
    "PredictionSet",
    "linear_predictors",
    "predict_counts",
    "predict_sizes",
    "simulate_missing_effects",
    "calibrate",
    "aggregate",
    "predict_pipeline",
    "summarize_cells",
    "lambda_summary",
    "coarsen_regions",
]
