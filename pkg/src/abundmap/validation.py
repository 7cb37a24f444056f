"""Input validation helpers used at estimator and CLI boundaries."""

from __future__ import annotations

import numpy as np
import pandas as pd

from .exceptions import DataError


def check_finite(x, name: str) -> np.ndarray:
    """Return ``x`` as a float array, rejecting NaN/inf."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        bad = int(np.sum(~np.isfinite(arr)))
        raise DataError(f"{name} contains {bad} non-finite value(s)")
    return arr


def check_coords(coords, name: str = "coords") -> np.ndarray:
    """Validate an (n, 2) coordinate array."""
    arr = np.asarray(coords, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DataError(f"{name} must have shape (n, 2), got {arr.shape}")
    return check_finite(arr, name)


def check_columns(df: pd.DataFrame, required, name: str = "table") -> None:
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise DataError(f"{name} is missing column(s): {', '.join(missing)}")


def check_covariates(df: pd.DataFrame, names, table_name: str = "table") -> None:
    """Check that the named covariate columns exist and are finite."""
    check_columns(df, names, table_name)
    for col in names:
        vals = pd.to_numeric(df[col], errors="coerce").to_numpy(dtype=float)
        if np.any(~np.isfinite(vals)):
            raise DataError(f"covariate '{col}' in {table_name} has NaN/inf entries")


def check_counts(y, name: str = "count") -> np.ndarray:
    arr = np.asarray(y)
    vals = check_finite(arr, name)
    if np.any(vals < 0):
        raise DataError(f"{name} must be non-negative")
    if np.any(vals != np.round(vals)):
        raise DataError(f"{name} must be integer-valued")
    return vals.astype(np.int64)


def check_probability(x, name: str, *, open_left=False, open_right=False) -> float:
    val = float(x)
    if not np.isfinite(val):
        raise DataError(f"{name} must be finite")
    lo_ok = val > 0 if open_left else val >= 0
    hi_ok = val < 1 if open_right else val <= 1
    if not (lo_ok and hi_ok):
        raise DataError(f"{name}={val} outside the allowed probability range")
    return val


class Standardizer:
    """Column-wise (x - mean) / sd transform, fitted once and reused.

    A standard-deviation floor keeps constant columns usable (they become
    all-zero rather than NaN). Applying the fitted transform to its own
    output is the identity up to floating point.
    """

    def __init__(self, means=None, sds=None):
        self.means = dict(means or {})
        self.sds = dict(sds or {})

    def fit(self, df: pd.DataFrame, names) -> "Standardizer":
        for col in names:
            vals = df[col].to_numpy(dtype=float)
            self.means[col] = float(np.mean(vals))
            sd = float(np.std(vals))
            self.sds[col] = sd if sd > 1e-12 else 1.0
        return self

    def transform(self, df: pd.DataFrame, names) -> np.ndarray:
        check_covariates(df, names)
        cols = []
        for col in names:
            if col not in self.means:
                raise DataError(f"covariate '{col}' was not seen during fit")
            vals = df[col].to_numpy(dtype=float)
            cols.append((vals - self.means[col]) / self.sds[col])
        if not cols:
            return np.empty((len(df), 0))
        return np.column_stack(cols)

    def to_dict(self) -> dict:
        return {"means": self.means, "sds": self.sds}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(means=d.get("means", {}), sds=d.get("sds", {}))
