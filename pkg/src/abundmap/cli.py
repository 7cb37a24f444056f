"""Command-line pipeline: grid, align, fit, predict, diagnose, simulate.

Every subcommand takes a config file (JSON, or TOML when the path ends in
.toml), an output directory, and optional --seed / --threads overrides.
Outputs are deterministic given the inputs and seed. Exit codes: 0 on
success, 2 for schema or configuration problems, 3 for sampler or
numerical failures (a diagnostics file is written next to the outputs).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import tables
from .align import PointCovariate, align_covariates
from .diagnostics import ppp, count_residuals, rootogram_data, size_cell_residuals
from .draws import read_draws, write_draws
from .estimators import HurdleSizeModel, ThinnedCountModel, pointwise_loglik
from .exceptions import (
    AbundmapError,
    CalibrationError,
    DataError,
    InitializationError,
    KrigingError,
    SamplerError,
)
from .gp_basis import HilbertBasis
from .grid import Grid, assign_districts, build_grid, load_district_polygons
from .predict import (
    aggregate,
    coarsen_regions,
    lambda_summary,
    predict_pipeline,
    summarize_cells,
)
from .simstudy import SimConfig, run_scenario

logger = logging.getLogger(__name__)

EXIT_SCHEMA = 2
EXIT_SAMPLER = 3


def load_config(path, allowed: set, name: str) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"config file not found: {path}")
    if path.suffix == ".toml":
        try:
            import tomllib as toml
        except ImportError:
            import tomli as toml
        with open(path, "rb") as fh:
            cfg = toml.load(fh)
    else:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    unknown = sorted(set(cfg) - allowed)
    if unknown:
        raise DataError(f"{name} config has unknown key(s): {', '.join(unknown)}")
    return cfg


def _write_json(obj, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- grid -------------------------------------------------------------------

GRID_KEYS = {"domain", "resolution_km", "districts", "mode", "seed"}


def cmd_grid(args) -> int:
    cfg = load_config(args.config, GRID_KEYS, "grid")
    for key in ("domain", "resolution_km"):
        if key not in cfg:
            raise DataError(f"grid config needs '{key}'")
    mode = cfg.get("mode", "lonlat")
    domain = cfg["domain"]
    if isinstance(domain, str):
        polys = load_district_polygons(domain)
        domain = [ring for _, geoms in polys for poly in geoms for ring in poly]
    districts = None
    if cfg.get("districts"):
        districts = load_district_polygons(cfg["districts"])
    grid = build_grid(domain, float(cfg["resolution_km"]), districts=districts, mode=mode)
    out = Path(args.out)
    tables.write_table(grid.cells, out / "cells.csv")
    print(f"wrote {len(grid.cells)} cells to {out / 'cells.csv'}")
    return 0


# -- align ------------------------------------------------------------------

ALIGN_KEYS = {"cells", "mode", "rasters", "points", "marks", "marks_districts",
              "smoothness", "seed"}


def cmd_align(args) -> int:
    cfg = load_config(args.config, ALIGN_KEYS, "align")
    if "cells" not in cfg:
        raise DataError("align config needs 'cells'")
    mode = cfg.get("mode", "lonlat")
    cells = tables.read_cells_csv(cfg["cells"])
    grid = Grid.from_cells_frame(cells, mode=mode)

    rasters = []
    for spec in cfg.get("rasters", []):
        rasters.append(tables.read_raster_csv(
            spec["path"], spec["name"], spec.get("transform", "identity"),
            bool(spec.get("drop_zero", False)),
        ))
    points = []
    trend_rasters = {}
    for spec in cfg.get("points", []):
        sites, values = tables.read_points_csv(spec["path"])
        points.append(PointCovariate(sites=sites, values=values, name=spec["name"]))
        if spec.get("trend"):
            trend_rasters[spec["name"]] = list(spec["trend"])

    marks = None
    if cfg.get("marks"):
        marks = tables.read_marks_csv(cfg["marks"])
        if "district" not in marks.columns:
            if not cfg.get("marks_districts"):
                raise DataError("marks lack a district column; provide 'marks_districts' polygons")
            polys = load_district_polygons(cfg["marks_districts"])
            marks["district"] = assign_districts(marks["lon"].to_numpy(),
                                                 marks["lat"].to_numpy(), polys)
            if (marks["district"] == "").any():
                raise DataError("some marks fall outside every district polygon")

    result = align_covariates(grid, rasters=rasters, points=points, marks=marks,
                              smoothness=float(cfg.get("smoothness", 1.5)),
                              trend_rasters=trend_rasters)
    out = Path(args.out)
    tables.write_table(result.cells, out / "aligned_cells.csv")
    print(f"wrote {len(result.cells)} aligned cells ({result.dropped_cells} dropped)")
    if result.marks is not None:
        tables.write_table(result.marks, out / "aligned_marks.csv")
        print(f"wrote {len(result.marks)} aligned marks")
    return 0


# -- fit --------------------------------------------------------------------

FIT_KEYS = {"model", "cells", "marks", "districts", "p_covariates", "mu_covariates",
            "chains", "iterations", "warmup", "seed", "scale_prior_on",
            "include_district_effects", "include_gp", "gp_num_basis",
            "gp_boundary_factor", "gp_layout", "fix_phi", "lscale_prior",
            "beta0_prior", "sigma_prior", "phi_prior"}


def cmd_fit(args) -> int:
    cfg = load_config(args.config, FIT_KEYS, "fit")
    model = cfg.get("model")
    if model not in ("size", "count"):
        raise DataError("fit config needs model: 'size' or 'count'")
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    common = dict(
        p_covariates=list(cfg.get("p_covariates", [])),
        mu_covariates=list(cfg.get("mu_covariates", [])),
        chains=int(cfg.get("chains", 4)),
        iterations=int(cfg.get("iterations", 2000)),
        warmup=int(cfg.get("warmup", 1000)),
        seed=seed,
        threads=args.threads,
        scale_prior_on=cfg.get("scale_prior_on", "sd"),
        include_district_effects=bool(cfg.get("include_district_effects", True)),
    )
    for key in ("beta0_prior", "sigma_prior"):
        if key in cfg:
            common[key] = tuple(cfg[key])

    out = Path(args.out)
    if model == "size":
        marks = tables.read_marks_csv(cfg["marks"], require_district=True)
        est = HurdleSizeModel(**common).fit(marks)
    else:
        cells = tables.read_cells_csv(cfg["cells"], require_count=True)
        districts = tables.read_districts_csv(cfg["districts"])
        extra = dict(
            include_gp=bool(cfg.get("include_gp", True)),
            gp_num_basis=int(cfg.get("gp_num_basis", 5)),
            gp_boundary_factor=float(cfg.get("gp_boundary_factor", 1.25)),
            gp_layout=cfg.get("gp_layout", "per_axis"),
            fix_phi=cfg.get("fix_phi"),
        )
        if "lscale_prior" in cfg:
            extra["lscale_prior"] = tuple(cfg["lscale_prior"])
        if "phi_prior" in cfg:
            extra["phi_prior"] = tuple(cfg["phi_prior"])
        est = ThinnedCountModel(**common, **extra).fit(cells, districts)

    write_draws(est.draws_, out / f"draws_{model}.csv", out / f"draws_{model}.meta.json")
    print(f"wrote {est.draws_.n_draws} draws to {out / f'draws_{model}.csv'}")
    worst = max(est.draws_.diagnostics["rhat"].values())
    print(f"max split R-hat: {worst:.3f}")
    return 0


# -- predict ------------------------------------------------------------------

PREDICT_KEYS = {"count_draws", "count_meta", "size_draws", "size_meta", "cells",
                "districts", "mode", "quantiles", "coarsen", "max_draws", "seed"}


def cmd_predict(args) -> int:
    cfg = load_config(args.config, PREDICT_KEYS, "predict")
    for key in ("count_draws", "count_meta", "cells"):
        if key not in cfg:
            raise DataError(f"predict config needs '{key}'")
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    cells = tables.read_cells_csv(cfg["cells"])
    count_draws = read_draws(cfg["count_draws"], cfg["count_meta"])
    size_draws = None
    if cfg.get("size_draws"):
        size_draws = read_draws(cfg["size_draws"], cfg["size_meta"])
    districts = tables.read_districts_csv(cfg["districts"]) if cfg.get("districts") else None
    max_draws = cfg.get("max_draws")
    if max_draws:
        keep = np.unique(np.linspace(0, count_draws.n_kept - 1, int(max_draws)).astype(int))
        count_draws = count_draws.subset(keep)
        if size_draws is not None:
            keep_s = np.unique(np.linspace(0, size_draws.n_kept - 1, int(max_draws)).astype(int))
            size_draws = size_draws.subset(keep_s)

    quantiles = tuple(cfg.get("quantiles", (0.025, 0.5, 0.975)))
    pred = predict_pipeline(count_draws, size_draws, cells, districts,
                            mode=cfg.get("mode", "expected"), seed=seed)
    out = Path(args.out)
    tables.write_table(summarize_cells(pred.counts_calibrated, pred.cell_ids, quantiles),
                       out / "counts_cells.csv")
    files = ["counts_cells.csv"]
    if pred.sizes is not None:
        tables.write_table(summarize_cells(pred.sizes, pred.cell_ids, quantiles),
                           out / "sizes_cells.csv")
        tables.write_table(summarize_cells(pred.abundance, pred.cell_ids, quantiles),
                           out / "abundance_cells.csv")
        district_table = aggregate(pred.abundance, pred.districts)
        tables.write_table(district_table.rename(columns={"region": "district"}),
                           out / "abundance_districts.csv")
        files += ["sizes_cells.csv", "abundance_cells.csv", "abundance_districts.csv"]
    tables.write_table(lambda_summary(pred), out / "lambda_districts.csv")
    files.append("lambda_districts.csv")
    if cfg.get("coarsen"):
        blocks = coarsen_regions(cells, int(cfg["coarsen"]))
        values = pred.abundance if pred.abundance is not None else pred.counts_calibrated
        coarse = aggregate(values, blocks).rename(columns={"region": "block"})
        tables.write_table(coarse, out / "coarse_blocks.csv")
        files.append("coarse_blocks.csv")
    print("wrote " + ", ".join(files))
    return 0


# -- diagnose -----------------------------------------------------------------

DIAGNOSE_KEYS = {"model", "draws", "meta", "cells", "marks", "districts",
                 "statistics", "replicates", "max_count", "pointwise", "seed"}


def cmd_diagnose(args) -> int:
    cfg = load_config(args.config, DIAGNOSE_KEYS, "diagnose")
    model_kind = cfg.get("model")
    if model_kind not in ("size", "count"):
        raise DataError("diagnose config needs model: 'size' or 'count'")
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    draws = read_draws(cfg["draws"], cfg["meta"])
    replicates = int(cfg.get("replicates", 500))
    out = Path(args.out)

    if model_kind == "count":
        cells = tables.read_cells_csv(cfg["cells"], require_count=True)
        districts = tables.read_districts_csv(cfg["districts"])
        gp_meta = draws.meta.get("gp_basis")
        est = ThinnedCountModel(
            p_covariates=draws.meta["p_covariates"],
            mu_covariates=draws.meta["mu_covariates"],
            include_district_effects=draws.meta.get("include_district_effects", True),
            include_gp=bool(gp_meta),
            gp_num_basis=gp_meta["num_basis"] if gp_meta else 5,
            gp_boundary_factor=gp_meta["boundary_factor"] if gp_meta else 1.25,
            gp_layout=gp_meta["layout"] if gp_meta else "per_axis",
            fix_phi=draws.meta.get("fix_phi"),
        )
        basis = HilbertBasis.from_dict(gp_meta) if gp_meta else None
        model, _ = est.build_model(cells, districts, gp_basis=basis)
        pi_map = {str(r["district"]): r["pi"] for _, r in districts.iterrows()}
        pi_cell = cells["district"].astype(str).map(pi_map).to_numpy(dtype=float)
        surveyed = np.isfinite(pi_cell) & (pi_cell > 0)
        residual_table = pd.DataFrame({
            "cell_id": cells.loc[surveyed, "cell_id"].to_numpy(),
            "count_residual": count_residuals(draws, model),
        })
    else:
        marks = tables.read_marks_csv(cfg["marks"], require_district=True)
        est = HurdleSizeModel(
            p_covariates=draws.meta["p_covariates"],
            mu_covariates=draws.meta["mu_covariates"],
            include_district_effects=draws.meta.get("include_district_effects", True),
        )
        model, _ = est.build_model(marks)
        if cfg.get("cells"):
            cells = tables.read_cells_csv(cfg["cells"])
            if "cell_id" not in marks.columns:
                grid = Grid.from_cells_frame(cells)
                idx = grid.cell_index_of(marks["lon"].to_numpy(), marks["lat"].to_numpy())
                marks = marks.assign(cell_id=cells["cell_id"].to_numpy()[np.maximum(idx, 0)])
                marks = marks.loc[idx >= 0]
            residual_table = size_cell_residuals(draws, marks, cells)
        else:
            residual_table = pd.DataFrame(columns=["cell_id", "size_residual"])

    statistics = tuple(cfg.get("statistics",
                               ("positive_mean", "positive_sd", "overdispersion",
                                "max", "zero_fraction")))
    report = ppp(draws, model, model_kind, statistics=statistics,
                 replicates=replicates, seed=seed)
    _write_json(report.to_dict(), out / f"ppp_{model_kind}.json")
    tables.write_table(residual_table, out / f"residuals_{model_kind}.csv")
    root = rootogram_data(draws, model, model_kind,
                          max_count=cfg.get("max_count"), replicates=replicates, seed=seed)
    tables.write_table(root, out / f"rootogram_{model_kind}.csv")
    files = [f"ppp_{model_kind}.json", f"residuals_{model_kind}.csv", f"rootogram_{model_kind}.csv"]
    if cfg.get("pointwise"):
        mat = pointwise_loglik(draws, model, max_draws=cfg.get("max_draws"))
        frame = pd.DataFrame(mat, columns=[f"obs{j}" for j in range(mat.shape[1])])
        tables.write_table(frame, out / f"pointwise_{model_kind}.csv")
        files.append(f"pointwise_{model_kind}.csv")
    print("wrote " + ", ".join(files))
    return 0


# -- simulate -----------------------------------------------------------------

SIMULATE_KEYS = {"replicates", "seed", "retention", "true_grid", "alt_grids",
                 "field_amplitude", "field_length_scale", "raster_resolution",
                 "count_intercept", "count_coefs", "zero_intercept", "zero_slope",
                 "phi", "size_intercept", "size_slope", "size_sigma", "size_hurdle_p",
                 "chains", "iterations", "warmup", "rhat_gate", "threads"}


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, SIMULATE_KEYS, "simulate")
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg["threads"] = args.threads
    for key in ("alt_grids", "count_coefs"):
        if key in cfg:
            cfg[key] = tuple(cfg[key])
    sim_config = SimConfig(**cfg)
    results, summary = run_scenario(sim_config)
    out = Path(args.out)
    lead = ["scenario", "resolution", "replicate", "percent_error"]
    ordered = results[lead + [c for c in results.columns if c not in lead]]
    tables.write_table(ordered, out / "scenario_results.csv")
    _write_json(summary, out / "summary.json")
    print(f"wrote {len(ordered)} scenario rows; "
          f"{summary['failed_or_gated']} failed or gated out")
    return 0


# -- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="abundmap",
        description="Fine-scale abundance mapping from marked presence-only point data",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in [("grid", cmd_grid), ("align", cmd_align), ("fit", cmd_fit),
                     ("predict", cmd_predict), ("diagnose", cmd_diagnose),
                     ("simulate", cmd_simulate)]:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON or TOML config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="root seed override")
        p.add_argument("--threads", type=int, default=1, help="worker cap")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        return args.func(args)
    except (InitializationError, SamplerError, KrigingError, CalibrationError) as exc:
        report = {"error": type(exc).__name__, "message": str(exc)}
        if hasattr(exc, "report"):
            report["report"] = exc.report
        if hasattr(exc, "diagnostics"):
            report["diagnostics"] = exc.diagnostics
        path = out / "error.json"
        _write_json(report, path)
        print(f"error: {exc} (diagnostics at {path})", file=sys.stderr)
        return EXIT_SAMPLER
    except (DataError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except AbundmapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA


if __name__ == "__main__":
    sys.exit(main())
