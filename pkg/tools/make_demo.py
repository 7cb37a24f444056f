"""Generate the bundled synthetic demo dataset under demo/.

Run from the repository root:  python tools/make_demo.py
"""

import json
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import expit

ROOT = Path(__file__).resolve().parents[1]
DEMO = ROOT / "demo"

RESOLUTION_KM = 1.5
KM_PER_DEG = 6371.0088 * np.pi / 180.0
DELTA = RESOLUTION_KM / KM_PER_DEG          # cell edge in degrees
N_SIDE = 30                                  # cells per axis
WEST, SOUTH = 34.0, -14.3
EAST = WEST + N_SIDE * DELTA
NORTH = SOUTH + N_SIDE * DELTA
# district borders sit exactly on cell boundaries so no cell straddles
# them; a 4x4 patchwork keeps enough districts for the flat variance
# priors on the random effects to behave
BREAKS = [0, 8, 15, 23, 30]
RNG = np.random.default_rng(20260808)


def smooth(lon, lat, freqs, seed):
    rng = np.random.default_rng(seed)
    out = np.zeros_like(lon)
    for fx, fy in freqs:
        phase = rng.uniform(0, 2 * np.pi, 2)
        amp = rng.uniform(0.5, 1.0)
        out += amp * np.sin(2 * np.pi * fx * (lon - WEST) / (EAST - WEST) + phase[0])
        out += amp * np.sin(2 * np.pi * fy * (lat - SOUTH) / (NORTH - SOUTH) + phase[1])
    return (out - out.mean()) / out.std()


def make_districts_geojson():
    quads = {}
    for i in range(4):
        for j in range(4):
            name = f"D{i * 4 + j + 1:02d}"
            w = WEST + BREAKS[j] * DELTA
            e = WEST + BREAKS[j + 1] * DELTA if j < 3 else EAST
            s = SOUTH + BREAKS[i] * DELTA
            n = SOUTH + BREAKS[i + 1] * DELTA if i < 3 else NORTH
            quads[name] = [w, s, e, n]
    features = []
    for name, (w, s, e, n) in quads.items():
        ring = [[w, s], [e, s], [e, n], [w, n], [w, s]]
        features.append({
            "type": "Feature",
            "properties": {"district": name},
            "geometry": {"type": "Polygon", "coordinates": [ring]},
        })
    obj = {"type": "FeatureCollection", "features": features}
    with open(DEMO / "districts.geojson", "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return quads


def make_rasters():
    # fine lattices standing in for gridded population / brightness sources
    nx, ny = 110, 110
    lon = np.linspace(WEST + 1e-4, EAST - 1e-4, nx)
    lat = np.linspace(SOUTH + 1e-4, NORTH - 1e-4, ny)
    LON, LAT = (g.ravel() for g in np.meshgrid(lon, lat, indexing="ij"))
    pop_signal = smooth(LON, LAT, [(1.3, 1.1), (2.4, 1.9)], seed=1)
    population = np.exp(3.0 + 1.2 * pop_signal + 0.15 * RNG.standard_normal(LON.size))
    population[population < 2.0] = 0.0  # uninhabited pockets get exact zeros
    bright_signal = smooth(LON, LAT, [(1.8, 1.4), (3.1, 2.6)], seed=2)
    brightness = np.maximum(0.0, 1.0 + bright_signal + 0.1 * RNG.standard_normal(LON.size))
    pd.DataFrame({"lon": LON, "lat": LAT, "value": population}).to_csv(
        DEMO / "raster_population.csv", index=False)
    pd.DataFrame({"lon": LON, "lat": LAT, "value": brightness}).to_csv(
        DEMO / "raster_brightness.csv", index=False)
    return (LON, LAT, pop_signal, bright_signal)


def make_survey_points():
    n = 140
    lon = RNG.uniform(WEST, EAST, n)
    lat = RNG.uniform(SOUTH, NORTH, n)
    value = smooth(lon, lat, [(1.1, 1.6)], seed=3) + 0.25 * RNG.standard_normal(n)
    pd.DataFrame({"lon": lon, "lat": lat, "value": value}).to_csv(
        DEMO / "survey_points.csv", index=False)


def make_marks(quads):
    # latent venue process on exactly the lattice the grid subcommand builds
    lon_c = WEST + (np.arange(N_SIDE) + 0.5) * DELTA
    lat_c = SOUTH + (np.arange(N_SIDE) + 0.5) * DELTA
    LON, LAT = (g.ravel() for g in np.meshgrid(lon_c, lat_c, indexing="ij"))
    sig1 = smooth(LON, LAT, [(1.3, 1.1), (2.4, 1.9)], seed=1)
    sig2 = smooth(LON, LAT, [(1.8, 1.4), (3.1, 2.6)], seed=2)
    p = expit(0.1 - 0.8 * sig2)
    mu = np.exp(0.55 + 0.7 * sig1 + 0.5 * sig2)
    zero = RNG.random(LON.size) < p
    lam = RNG.gamma(1.5, mu / 1.5)
    counts = np.where(zero, 0, RNG.poisson(lam))

    # two unsurveyed districts; the rest have varied retention
    pi_cycle = [0.65, 0.5, 0.75, 0.6, 0.45, 0.7, 0.55, 0.8, 0.5, 0.65, 0.6, 0.7, 0.5, 0.75]
    names = sorted(quads)
    pi_by_district = {name: 0.0 for name in ("D04", "D13")}
    k = 0
    for name in names:
        if name not in pi_by_district:
            pi_by_district[name] = pi_cycle[k % len(pi_cycle)]
            k += 1
    rows = []
    true_totals = {name: 0 for name in quads}
    for i in range(LON.size):
        district = next(name for name, (w, s, e, n) in quads.items()
                        if w <= LON[i] < e + 1e-9 and s <= LAT[i] < n + 1e-9)
        true_totals[district] += int(counts[i])
        for _ in range(int(counts[i])):
            if RNG.random() < pi_by_district[district]:
                vlon = LON[i] + RNG.uniform(-DELTA / 2, DELTA / 2)
                vlat = LAT[i] + RNG.uniform(-DELTA / 2, DELTA / 2)
                size = 0.0 if RNG.random() < 0.2 else float(
                    np.round(np.exp(RNG.normal(1.4 + 0.3 * sig1[i], 0.7))))
                rows.append({"lon": vlon, "lat": vlat, "size": size})
    marks = pd.DataFrame(rows)
    marks.to_csv(DEMO / "marks.csv", index=False)

    districts = pd.DataFrame({
        "district": sorted(quads),
        "pi": [pi_by_district[d] for d in sorted(quads)],
        "known_total": [float(true_totals[d]) if pi_by_district[d] > 0 else np.nan
                        for d in sorted(quads)],
    })
    districts.to_csv(DEMO / "districts.csv", index=False)
    print("true venue totals:", true_totals, "observed:", len(marks))


def make_configs():
    configs = {
        "grid.json": {
            "domain": [WEST, SOUTH, EAST, NORTH],
            "resolution_km": 1.5,
            "districts": "demo/districts.geojson",
            "mode": "lonlat",
        },
        "align.json": {
            "cells": "out/grid/cells.csv",
            "mode": "lonlat",
            "rasters": [
                {"path": "demo/raster_population.csv", "name": "population",
                 "transform": "log", "drop_zero": True},
                {"path": "demo/raster_brightness.csv", "name": "brightness",
                 "transform": "log1p"},
            ],
            "points": [
                {"path": "demo/survey_points.csv", "name": "survey",
                 "trend": ["brightness"]},
            ],
            "marks": "demo/marks.csv",
            "marks_districts": "demo/districts.geojson",
        },
        "fit_count.json": {
            "model": "count",
            "cells": "out/align/aligned_cells.csv",
            "districts": "demo/districts.csv",
            "p_covariates": ["brightness", "survey"],
            "mu_covariates": ["population", "brightness"],
            "chains": 2, "iterations": 1600, "warmup": 800,
            "include_gp": True, "gp_num_basis": 3,
            "lscale_prior": [3.0, 0.28],
            "seed": 1,
        },
        "fit_size.json": {
            "model": "size",
            "marks": "out/align/aligned_marks.csv",
            "p_covariates": ["brightness"],
            "mu_covariates": ["population", "survey"],
            "chains": 2, "iterations": 1200, "warmup": 600,
            "seed": 2,
        },
        "predict.json": {
            "count_draws": "out/fit/draws_count.csv",
            "count_meta": "out/fit/draws_count.meta.json",
            "size_draws": "out/fit/draws_size.csv",
            "size_meta": "out/fit/draws_size.meta.json",
            "cells": "out/align/aligned_cells.csv",
            "districts": "demo/districts.csv",
            "mode": "expected",
            "coarsen": 3,
            "seed": 3,
        },
        "diagnose_count.json": {
            "model": "count",
            "draws": "out/fit/draws_count.csv",
            "meta": "out/fit/draws_count.meta.json",
            "cells": "out/align/aligned_cells.csv",
            "districts": "demo/districts.csv",
            "replicates": 400,
            "seed": 4,
        },
        "diagnose_size.json": {
            "model": "size",
            "draws": "out/fit/draws_size.csv",
            "meta": "out/fit/draws_size.meta.json",
            "marks": "out/align/aligned_marks.csv",
            "cells": "out/align/aligned_cells.csv",
            "replicates": 400,
            "seed": 5,
        },
        "simulate_smoke.json": {
            "replicates": 2,
            "seed": 6,
            "chains": 2,
            "iterations": 400,
            "warmup": 200,
        },
    }
    for name, cfg in configs.items():
        with open(DEMO / name, "w", encoding="utf-8") as fh:
            json.dump(cfg, fh, indent=2, sort_keys=True)
            fh.write("\n")


def main():
    DEMO.mkdir(exist_ok=True)
    quads = make_districts_geojson()
    make_rasters()
    make_survey_points()
    make_marks(quads)
    make_configs()
    print(f"demo data written to {DEMO}")


if __name__ == "__main__":
    main()
