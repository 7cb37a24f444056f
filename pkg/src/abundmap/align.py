"""Covariate alignment: rasters to cells, nearest recordings, kriged fields.

Fine-resolution raster points are averaged within each cell; transforms
(log, log1p) are applied after alignment. Point covariates are kriged to
cell centroids and to mark locations. Cells left without any raster point,
or failing a positivity requirement before a log transform, are dropped by
the habitability mask.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from .exceptions import DataError
from .grid import Grid, project_km
from .kriging import MaternKriging, dedupe_sites
from .validation import check_coords, check_finite

logger = logging.getLogger(__name__)

_TRANSFORMS = {
    "identity": lambda v: v,
    "log": np.log,
    "log1p": np.log1p,
}


@dataclass
class PointCovariate:
    """A point-referenced covariate (survey sites with one value each)."""

    sites: np.ndarray
    values: np.ndarray
    name: str = "covariate"

    def __post_init__(self):
        self.sites, self.values = dedupe_sites(self.sites, self.values)


@dataclass
class RasterCovariate:
    """A fine-resolution value grid stored as scattered lon/lat points."""

    lon: np.ndarray
    lat: np.ndarray
    values: np.ndarray
    name: str = "raster"
    transform: str = "identity"
    drop_zero: bool = False

    def __post_init__(self):
        self.lon = check_finite(self.lon, f"{self.name} lon")
        self.lat = check_finite(self.lat, f"{self.name} lat")
        self.values = check_finite(self.values, f"{self.name} values")
        if self.transform not in _TRANSFORMS:
            raise DataError(f"unknown transform '{self.transform}'")
        if len(self.lon) == 0:
            raise DataError(f"raster '{self.name}' is empty")


def raster_to_cells(raster: RasterCovariate, grid: Grid) -> np.ndarray:
    """Mean of raster points inside each cell, transform applied afterwards.

    Returns one value per grid cell, NaN where a cell contains no raster
    point. A zero mean under ``drop_zero`` also becomes NaN so the caller's
    habitability mask removes the cell.
    """
    idx = grid.cell_index_of(raster.lon, raster.lat)
    inside = idx >= 0
    n = len(grid.cells)
    sums = np.bincount(idx[inside], weights=raster.values[inside], minlength=n)
    counts = np.bincount(idx[inside], minlength=n)
    with np.errstate(invalid="ignore"):
        means = sums / counts
    means[counts == 0] = np.nan
    if raster.drop_zero:
        means[means == 0.0] = np.nan
    fn = _TRANSFORMS[raster.transform]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = fn(means)
    out[~np.isfinite(out)] = np.nan
    return out


def nearest_value(raster: RasterCovariate, targets, mode: str = "planar") -> np.ndarray:
    """Value of the nearest raster point for each target.

    Distances are Euclidean in locally projected kilometres (lonlat mode)
    or raw units (planar). Exact distance ties resolve to the lowest point
    index.
    """
    targets = check_coords(targets, "targets")
    pts = np.column_stack([raster.lon, raster.lat])
    lat0 = float(np.mean(raster.lat)) if mode == "lonlat" else None
    pxy = project_km(pts[:, 0], pts[:, 1], lat0=lat0, mode=mode)
    txy = project_km(targets[:, 0], targets[:, 1], lat0=lat0, mode=mode)
    tree = cKDTree(pxy)
    k = min(4, len(pts))
    dist, idx = tree.query(txy, k=k)
    if k == 1:
        return raster.values[idx]
    dist = np.atleast_2d(dist)
    idx = np.atleast_2d(idx)
    tol = 1e-9 * (1.0 + dist[:, [0]])
    best = np.where(dist <= dist[:, [0]] + tol, idx, len(pts))
    return raster.values[best.min(axis=1)]


@dataclass
class AlignmentResult:
    cells: pd.DataFrame
    marks: pd.DataFrame | None
    dropped_cells: int
    kriging_models: dict = field(default_factory=dict)


def align_covariates(
    grid: Grid,
    rasters: list[RasterCovariate] = (),
    points: list[PointCovariate] = (),
    marks: pd.DataFrame | None = None,
    smoothness: float = 1.5,
    trend_rasters: dict | None = None,
) -> AlignmentResult:
    """Attach covariate columns to cells (and to marks when provided).

    Raster covariates are cell means (nearest recording at mark locations);
    point covariates are kriged to cell centroids and mark locations. A
    kriging trend can be requested per point covariate via ``trend_rasters``
    mapping covariate name to a list of raster names whose nearest values
    serve as trend columns.
    """
    cells = grid.cells.copy()
    mode = grid.mode
    n = len(cells)
    trend_rasters = trend_rasters or {}
    raster_by_name = {r.name: r for r in rasters}

    cols = {}
    for raster in rasters:
        cols[raster.name] = raster_to_cells(raster, grid)

    cell_xy = np.column_stack([cells["lon"].to_numpy(), cells["lat"].to_numpy()])
    models = {}
    for cov in points:
        trend_names = list(trend_rasters.get(cov.name, []))
        for t in trend_names:
            if t not in raster_by_name:
                raise DataError(f"trend raster '{t}' for covariate '{cov.name}' not provided")
        if trend_names:
            site_trend = np.column_stack(
                [nearest_value(raster_by_name[t], cov.sites, mode) for t in trend_names]
            )
            cell_trend = np.column_stack(
                [nearest_value(raster_by_name[t], cell_xy, mode) for t in trend_names]
            )
        else:
            site_trend = None
            cell_trend = None
        model = MaternKriging(smoothness=smoothness, coord_mode=mode)
        model.fit(cov.sites, cov.values, trend=site_trend)
        cols[cov.name] = model.predict(cell_xy, trend=cell_trend)
        models[cov.name] = (model, trend_names)

    for name, vals in cols.items():
        cells[name] = vals

    covariate_names = list(cols.keys())
    missing = cells[covariate_names].isna().any(axis=1) if covariate_names else pd.Series(False, index=cells.index)
    dropped = int(missing.sum())
    if dropped:
        logger.warning("dropping %d cell(s) with missing covariates (habitability mask)", dropped)
        cells = cells.loc[~missing].reset_index(drop=True)

    marks_out = None
    if marks is not None:
        marks_out = marks.copy()
        mark_xy = np.column_stack([marks_out["lon"].to_numpy(), marks_out["lat"].to_numpy()])
        check_coords(mark_xy, "mark coordinates")
        # the observed occurrence count of a cell is its number of marks
        pos = grid.cell_index_of(mark_xy[:, 0], mark_xy[:, 1])
        full_counts = np.bincount(pos[pos >= 0], minlength=len(grid.cells))
        id_to_count = dict(zip(grid.cells["cell_id"].to_numpy(), full_counts))
        cells["count"] = [id_to_count.get(cid, 0) for cid in cells["cell_id"]]
        outside = int(np.sum(pos < 0))
        if outside:
            logger.warning("%d mark(s) fall outside the grid", outside)
        lost = int(full_counts.sum() - cells["count"].sum())
        if lost:
            logger.warning("%d mark(s) fall in cells dropped by the habitability mask", lost)
        for raster in rasters:
            vals = nearest_value(raster, mark_xy, mode)
            if raster.drop_zero:
                vals = np.where(vals == 0.0, np.nan, vals)
            fn = _TRANSFORMS[raster.transform]
            with np.errstate(divide="ignore", invalid="ignore"):
                vals = fn(vals)
            marks_out[raster.name] = vals
        for cov in points:
            model, trend_names = models[cov.name]
            if trend_names:
                mark_trend = np.column_stack(
                    [nearest_value(raster_by_name[t], mark_xy, mode) for t in trend_names]
                )
            else:
                mark_trend = None
            marks_out[cov.name] = model.predict(mark_xy, trend=mark_trend)
        bad = marks_out[covariate_names].isna().any(axis=1) if covariate_names else pd.Series(False, index=marks_out.index)
        if bad.any():
            logger.warning("dropping %d mark(s) with missing covariates", int(bad.sum()))
            marks_out = marks_out.loc[~bad].reset_index(drop=True)
        if "district" not in marks_out.columns:
            raise DataError("marks table needs a district column (assign before aligning)")

    return AlignmentResult(cells=cells, marks=marks_out, dropped_cells=dropped, kriging_models=models)


__all__ = [
    "PointCovariate",
    "RasterCovariate",
    "raster_to_cells",
    "nearest_value",
    "align_covariates",
    "AlignmentResult",
]
