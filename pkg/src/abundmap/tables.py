"""CSV schemas used at the command-line boundary.

All tabular files are UTF-8 CSV with a header row. Point and raster inputs
are `lon,lat,value`; cells are `cell_id,lon,lat,area_km2,district` plus one
column per covariate (and `count` once observations are attached); marks
are `lon,lat,size` plus district and covariates; districts are
`district,pi,known_total` with blanks where a value is unknown.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd

from .align import RasterCovariate
from .exceptions import DataError
from .validation import check_columns, check_finite

CELL_BASE_COLUMNS = ["cell_id", "lon", "lat", "area_km2", "district"]


def _read_csv(path, name: str) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{name} file not found: {path}")
    try:
        return pd.read_csv(path)
    except Exception as exc:
        raise DataError(f"could not parse {name} file {path}: {exc}") from exc


def read_points_csv(path) -> tuple[np.ndarray, np.ndarray]:
    frame = _read_csv(path, "points")
    check_columns(frame, ["lon", "lat", "value"], f"points file {path}")
    sites = check_finite(frame[["lon", "lat"]].to_numpy(dtype=float), "point coordinates")
    values = check_finite(frame["value"].to_numpy(dtype=float), "point values")
    return sites, values


def read_raster_csv(path, name: str, transform: str = "identity",
                    drop_zero: bool = False) -> RasterCovariate:
    frame = _read_csv(path, "raster")
    check_columns(frame, ["lon", "lat", "value"], f"raster file {path}")
    return RasterCovariate(
        lon=frame["lon"].to_numpy(dtype=float),
        lat=frame["lat"].to_numpy(dtype=float),
        values=frame["value"].to_numpy(dtype=float),
        name=name, transform=transform, drop_zero=drop_zero,
    )


def read_cells_csv(path, require_count: bool = False) -> pd.DataFrame:
    frame = _read_csv(path, "cells")
    required = CELL_BASE_COLUMNS + (["count"] if require_count else [])
    check_columns(frame, required, f"cells file {path}")
    covariates = [c for c in frame.columns if c not in CELL_BASE_COLUMNS + ["count"]]
    for col in ["lon", "lat", "area_km2"] + covariates:
        vals = pd.to_numeric(frame[col], errors="coerce")
        if vals.isna().any():
            raise DataError(f"cells file {path}: column '{col}' has missing or non-numeric entries")
        if not np.all(np.isfinite(vals.to_numpy(dtype=float))):
            raise DataError(f"cells file {path}: column '{col}' has non-finite entries")
    return frame


def read_marks_csv(path, require_district: bool = False) -> pd.DataFrame:
    frame = _read_csv(path, "marks")
    required = ["lon", "lat", "size"] + (["district"] if require_district else [])
    check_columns(frame, required, f"marks file {path}")
    sizes = pd.to_numeric(frame["size"], errors="coerce")
    if sizes.isna().any() or (sizes < 0).any():
        raise DataError(f"marks file {path}: sizes must be non-negative numbers")
    return frame


def read_districts_csv(path) -> pd.DataFrame:
    frame = _read_csv(path, "districts")
    check_columns(frame, ["district", "pi"], f"districts file {path}")
    if "known_total" not in frame.columns:
        frame["known_total"] = np.nan
    frame["pi"] = pd.to_numeric(frame["pi"], errors="coerce")
    frame["known_total"] = pd.to_numeric(frame["known_total"], errors="coerce")
    finite_pi = frame["pi"].dropna()
    if ((finite_pi < 0) | (finite_pi > 1)).any():
        raise DataError(f"districts file {path}: pi must lie in [0, 1]")
    if frame["district"].astype(str).duplicated().any():
        raise DataError(f"districts file {path}: duplicate district labels")
    return frame


def write_table(frame: pd.DataFrame, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)


__all__ = [
    "CELL_BASE_COLUMNS",
    "read_points_csv",
    "read_raster_csv",
    "read_cells_csv",
    "read_marks_csv",
    "read_districts_csv",
    "write_table",
]
