"""Analysis grid construction and district assignment.

Two coordinate modes are supported. In "lonlat" mode the grid is regular in
degrees: the cell edge in degrees is resolution_km converted at one degree
of latitude, and cell areas follow the spherical band formula, so they vary
slightly with latitude. In "planar" mode coordinates are abstract units and
the cell area is exactly resolution squared.

District polygons come from GeoJSON; containment of cell centroids uses an
even-odd ray cast, so polygons with holes and multipolygons work. Cells
whose centroid falls in no district are dropped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .exceptions import DataError
from .validation import check_finite

EARTH_RADIUS_KM = 6371.0088
KM_PER_DEG = EARTH_RADIUS_KM * np.pi / 180.0


@dataclass
class Grid:
    """A regular grid of cells plus the structure needed to re-bin points."""

    cells: pd.DataFrame  # cell_id, lon, lat, area_km2, district
    resolution: float    # target cell edge (km in lonlat mode, units in planar)
    mode: str = "planar"
    west: float = 0.0
    south: float = 0.0
    dlon: float = 1.0
    dlat: float = 1.0
    n_cols: int = 1
    n_rows: int = 1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = self.cells["cell_id"].to_numpy()
        if len(np.unique(ids)) != len(ids):
            raise DataError("cell ids must be unique")
        if np.any(self.cells["area_km2"].to_numpy() <= 0):
            raise DataError("cell areas must be positive")

    def __len__(self) -> int:
        return len(self.cells)

    def rowcol_of(self, lon, lat) -> tuple[np.ndarray, np.ndarray]:
        """Row/column index of arbitrary points in the grid's lattice."""
        lon = np.asarray(lon, dtype=float)
        lat = np.asarray(lat, dtype=float)
        col = np.floor((lon - self.west) / self.dlon).astype(int)
        row = np.floor((lat - self.south) / self.dlat).astype(int)
        return row, col

    def cell_index_of(self, lon, lat) -> np.ndarray:
        """Position (iloc) of each point's cell in ``cells``; -1 if absent."""
        row, col = self.rowcol_of(lon, lat)
        crow, ccol = self.rowcol_of(self.cells["lon"].to_numpy(), self.cells["lat"].to_numpy())
        lut = {}
        for pos, (r, c) in enumerate(zip(crow, ccol)):
            lut[(int(r), int(c))] = pos
        out = np.full(len(row), -1, dtype=int)
        inside = (row >= 0) & (row < self.n_rows) & (col >= 0) & (col < self.n_cols)
        for i in np.nonzero(inside)[0]:
            out[i] = lut.get((int(row[i]), int(col[i])), -1)
        return out

    @classmethod
    def from_cells_frame(cls, cells: pd.DataFrame, mode: str = "planar") -> "Grid":
        """Reconstruct lattice structure from a (possibly masked) cells table."""
        lons = np.sort(np.unique(cells["lon"].to_numpy()))
        lats = np.sort(np.unique(cells["lat"].to_numpy()))
        dlon = float(np.min(np.diff(lons))) if len(lons) > 1 else 1.0
        dlat = float(np.min(np.diff(lats))) if len(lats) > 1 else dlon
        west = float(lons[0] - dlon / 2.0)
        south = float(lats[0] - dlat / 2.0)
        n_cols = int(np.round((lons[-1] + dlon / 2.0 - west) / dlon))
        n_rows = int(np.round((lats[-1] + dlat / 2.0 - south) / dlat))
        res = dlat * KM_PER_DEG if mode == "lonlat" else dlat
        return cls(cells=cells.reset_index(drop=True), resolution=res, mode=mode,
                   west=west, south=south, dlon=dlon, dlat=dlat,
                   n_cols=n_cols, n_rows=n_rows)


def _ring_contains(ring: np.ndarray, lon, lat) -> np.ndarray:
    """Even-odd ray cast of points against one closed ring, vectorized."""
    x1, y1 = ring[:-1, 0], ring[:-1, 1]
    x2, y2 = ring[1:, 0], ring[1:, 1]
    lon = np.asarray(lon, dtype=float)[:, None]
    lat = np.asarray(lat, dtype=float)[:, None]
    crosses = (y1 > lat) != (y2 > lat)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_at = x1 + (lat - y1) * (x2 - x1) / (y2 - y1)
    hits = crosses & (lon < x_at)
    return hits.sum(axis=1) % 2 == 1


def polygon_contains(polygon, lon, lat) -> np.ndarray:
    """Even-odd containment against a polygon given as a list of rings."""
    out = np.zeros(np.shape(np.asarray(lon)), dtype=bool)
    for ring in polygon:
        arr = np.asarray(ring, dtype=float)
        if not np.allclose(arr[0], arr[-1]):
            arr = np.vstack([arr, arr[0]])
        out ^= _ring_contains(arr, lon, lat)
    return out


def load_district_polygons(path_or_obj) -> list[tuple[str, list]]:
    """Read (name, polygons) pairs from a GeoJSON FeatureCollection.

    The district label is taken from the first of the properties
    'district', 'name', 'NAME' that is present.
    """
    if isinstance(path_or_obj, (str,)):
        with open(path_or_obj, encoding="utf-8") as fh:
            obj = json.load(fh)
    else:
        obj = path_or_obj
    feats = obj.get("features", [])
    out = []
    for i, feat in enumerate(feats):
        props = feat.get("properties") or {}
        name = None
        for key in ("district", "name", "NAME"):
            if key in props:
                name = str(props[key])
                break
        if name is None:
            name = f"district_{i}"
        geom = feat.get("geometry") or {}
        gtype = geom.get("type")
        coords = geom.get("coordinates")
        if gtype == "Polygon":
            polys = [coords]
        elif gtype == "MultiPolygon":
            polys = list(coords)
        else:
            raise DataError(f"district feature '{name}' has unsupported geometry type {gtype}")
        out.append((name, polys))
    if not out:
        raise DataError("district file contains no features")
    return out


def assign_districts(lon, lat, districts) -> np.ndarray:
    """District label of each point; empty string where no polygon contains it."""
    lon = np.asarray(lon, dtype=float)
    labels = np.array([""] * len(lon), dtype=object)
    for name, polys in districts:
        unassigned = labels == ""
        if not unassigned.any():
            break
        hit = np.zeros(len(lon), dtype=bool)
        for poly in polys:
            hit[unassigned] |= polygon_contains(poly, lon[unassigned], lat[unassigned])
        labels[unassigned & hit] = name
    return labels


def cell_areas_km2(lat_centers, dlon_deg, dlat_deg) -> np.ndarray:
    """Spherical-earth area of lon/lat-regular cells centred at given latitudes."""
    lat = np.deg2rad(np.asarray(lat_centers, dtype=float))
    half = np.deg2rad(dlat_deg) / 2.0
    band = np.sin(lat + half) - np.sin(lat - half)
    return EARTH_RADIUS_KM**2 * np.deg2rad(dlon_deg) * band


def build_grid(domain, resolution_km: float, districts=None, mode: str = "planar") -> Grid:
    """Tile a domain with square cells and assign each to a district.

    domain : (west, south, east, north) bounding box, or a polygon given as
        a list of rings whose bounding box is tiled and whose interior
        filters the cells.
    resolution_km : target cell edge; kilometres in lonlat mode, raw units
        in planar mode.
    districts : optional list of (name, polygons); when omitted every cell
        gets the single district "domain".
    """
    if resolution_km <= 0:
        raise DataError("resolution must be positive")
    domain_poly = None
    if isinstance(domain, (tuple, list)) and len(domain) == 4 and np.isscalar(domain[0]):
        west, south, east, north = (float(v) for v in domain)
    else:
        domain_poly = domain
        flat = np.vstack([np.asarray(r, dtype=float) for r in domain])
        west, south = flat.min(axis=0)
        east, north = flat.max(axis=0)
    if not (east > west and north > south):
        raise DataError("domain is empty")

    if mode == "lonlat":
        delta = resolution_km / KM_PER_DEG
        dlon = dlat = delta
    elif mode == "planar":
        dlon = dlat = resolution_km
    else:
        raise DataError(f"unknown grid mode '{mode}'")

    n_cols = int(np.ceil((east - west) / dlon - 1e-9))
    n_rows = int(np.ceil((north - south) / dlat - 1e-9))
    if n_cols < 1 or n_rows < 1:
        raise DataError("domain is smaller than one cell")

    cols, rows = np.meshgrid(np.arange(n_cols), np.arange(n_rows), indexing="xy")
    cols = cols.ravel()
    rows = rows.ravel()
    lon = west + (cols + 0.5) * dlon
    lat = south + (rows + 0.5) * dlat
    check_finite(lon, "cell longitudes")

    if mode == "lonlat":
        area = cell_areas_km2(lat, dlon, dlat)
    else:
        area = np.full(lon.shape, resolution_km**2)

    keep = np.ones(len(lon), dtype=bool)
    if domain_poly is not None:
        keep &= polygon_contains(domain_poly, lon, lat)

    if districts is not None:
        labels = assign_districts(lon, lat, districts)
        keep &= labels != ""
    else:
        labels = np.array(["domain"] * len(lon), dtype=object)

    cells = pd.DataFrame(
        {
            "cell_id": np.arange(len(lon))[keep],
            "lon": lon[keep],
            "lat": lat[keep],
            "area_km2": area[keep],
            "district": labels[keep],
        }
    ).reset_index(drop=True)
    if len(cells) == 0:
        raise DataError("no cells remain after district assignment")
    return Grid(cells=cells, resolution=resolution_km, mode=mode,
                west=west, south=south, dlon=dlon, dlat=dlat,
                n_cols=n_cols, n_rows=n_rows)


def drop_cells(grid: Grid, drop_mask) -> Grid:
    """Remove cells by boolean mask (habitability filtering)."""
    keep = ~np.asarray(drop_mask, dtype=bool)
    return Grid(cells=grid.cells.loc[keep].reset_index(drop=True),
                resolution=grid.resolution, mode=grid.mode,
                west=grid.west, south=grid.south, dlon=grid.dlon, dlat=grid.dlat,
                n_cols=grid.n_cols, n_rows=grid.n_rows, meta=dict(grid.meta))


def project_km(lon, lat, lat0: float | None = None, mode: str = "lonlat") -> np.ndarray:
    """Local equirectangular projection to kilometres (identity in planar mode)."""
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    if mode == "planar":
        return np.column_stack([lon, lat])
    if lat0 is None:
        lat0 = float(np.mean(lat))
    x = KM_PER_DEG * np.cos(np.deg2rad(lat0)) * lon
    y = KM_PER_DEG * lat
    return np.column_stack([x, y])


__all__ = [
    "EARTH_RADIUS_KM",
    "KM_PER_DEG",
    "Grid",
    "build_grid",
    "drop_cells",
    "cell_areas_km2",
    "polygon_contains",
    "assign_districts",
    "load_district_polygons",
    "project_km",
]
