"""Command-line entry point.

Subcommands: ingest, terrain, cluster, sample, trace, estimate, map,
export-tiles, import-preds, metrics. Exit codes: 0 success, 1 validation
error (bad inputs/config/usage), 2 runtime failure. Every run writes a
resolved config snapshot (run.lock.json) next to its outputs; reruns with
identical config and seed are byte-reproducible.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import engine, report, sampling, terrain, tiles
from .config import RunConfig, landcover_table, load_config, sampling_preset
from .diffusion import fit_normalizer
from .engine import EstimateContext, estimate_link, moving_average, pearson, sign_agreement
from .errors import AgchanError
from .geometry import LinkSpec
from .losses import load_weather_csv
from .raster import RasterGrid, load_raster, write_agt1
from .raytrace import TraceContext, trace_link
from .reflection import build_reflection_map


def _load_cfg(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    for attr in ("seed", "preset", "threads"):
        v = getattr(args, attr, None)
        if v is not None:
            setattr(cfg, attr, v)
    if getattr(args, "budget", None) is not None:
        cfg.sample_budget = args.budget
    if cfg.preset and getattr(args, "preset", None):
        cfg.coeffs = sampling_preset(cfg.preset)
    for attr in ("dem", "landcover", "function", "weather"):
        v = getattr(args, attr, None)
        if v is not None:
            setattr(cfg, f"{attr}_path" if attr != "weather" else "weather_path", v)
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    return cfg


def _load_rasters(cfg: RunConfig):
    dem = load_raster(cfg.resolved_path(cfg.dem_path), "dem",
                      (cfg.dem_min_m, cfg.dem_max_m))
    landcover = None
    function = None
    if cfg.landcover_path:
        landcover = load_raster(cfg.resolved_path(cfg.landcover_path), "landcover")
    if cfg.function_path:
        function = load_raster(cfg.resolved_path(cfg.function_path), "function")
    return dem, landcover, function


def _estimate_context(cfg: RunConfig, dem, landcover, with_reflection=False):
    classes = landcover_table(cfg.landcover_overrides)
    tctx = TraceContext.from_grids(dem, landcover, classes=classes,
                                   truncation_margin_m=cfg.truncation_margin_m)
    weather = []
    if cfg.weather_path:
        weather = load_weather_csv(cfg.resolved_path(cfg.weather_path))
    refl_map = None
    derivs = None
    if with_reflection and landcover is not None:
        derivs = terrain.derive_terrain(dem)
        refl_map = build_reflection_map(
            derivs, landcover, classes,
            cfg.reflect_w_slope, cfg.reflect_w_rough, cfg.reflect_w_curv,
        )
    return EstimateContext(
        trace=tctx, weather=weather, reflection_map=refl_map, derivs=derivs,
        diffuse_offset_db=cfg.diffuse_offset_db, rain_height_km=cfg.rain_height_km,
        ring_kwargs={
            "ring_start_m": cfg.reflect_ring_start_m,
            "ring_factor": cfg.reflect_ring_factor,
            "ring_max_m": cfg.reflect_ring_max_m,
            "ring_points": cfg.reflect_ring_points,
            "keep_percentile": cfg.reflect_percentile,
            "floor": cfg.reflect_floor,
            "specular_tol_deg": cfg.specular_tol_deg,
        },
    )


def _dump_json(obj, path):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def cmd_ingest(args) -> int:
    cfg = _load_cfg(args)
    dem, landcover, function = _load_rasters(cfg)
    summary = {"dem": _grid_summary(dem)}
    if landcover is not None:
        summary["landcover"] = _grid_summary(landcover)
    if function is not None:
        summary["function"] = _grid_summary(function)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.to_agt1:
        write_agt1(dem, out / "dem.agt")
        summary["converted"] = [str(out / "dem.agt")]
        if landcover is not None:
            write_agt1(landcover, out / "landcover.agt")
            summary["converted"].append(str(out / "landcover.agt"))
    _dump_json(summary, out / "ingest.json")
    cfg.write_lock(out)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _grid_summary(g: RasterGrid) -> dict:
    valid = g.values[g.valid_mask()]
    return {
        "width": g.width, "height": g.height, "cell_size": g.cell_size,
        "origin": [g.origin_x, g.origin_y],
        "min": float(valid.min()) if valid.size else None,
        "max": float(valid.max()) if valid.size else None,
        "nodata_cells": int((~g.valid_mask()).sum()),
    }


def cmd_terrain(args) -> int:
    cfg = _load_cfg(args)
    dem, _, _ = _load_rasters(cfg)
    derivs = terrain.derive_terrain(dem)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("slope_deg", "roughness", "curvature", "tpi", "tri"):
        write_agt1(derivs.layer_grid(name), out / f"{name}.agt")
    tpi_s = terrain.tpi_at_radius(dem, cfg.tpi_small_px)
    tpi_l = terrain.tpi_at_radius(dem, cfg.tpi_large_px)
    weiss = terrain.classify_weiss(tpi_s, tpi_l, derivs.slope_deg, cfg.slope_flat_deg)
    weiss_grid = RasterGrid(dem.origin_x, dem.origin_y, dem.cell_size,
                            dem.width, dem.height, -1.0, weiss.astype(np.float64))
    write_agt1(weiss_grid, out / "weiss.agt")
    cfg.write_lock(out)
    print(f"wrote terrain layers to {out}")
    return 0


def _features_and_classes(cfg, dem, landcover, function):
    derivs = terrain.derive_terrain(dem)
    tpi_s = terrain.tpi_at_radius(dem, cfg.tpi_small_px)
    tpi_l = terrain.tpi_at_radius(dem, cfg.tpi_large_px)
    weiss = terrain.classify_weiss(tpi_s, tpi_l, derivs.slope_deg, cfg.slope_flat_deg)

    valid = dem.valid_mask() & (weiss >= 0)
    rows, cols = np.nonzero(valid)
    xs = dem.origin_x + (cols + 0.5) * dem.cell_size
    ys = dem.origin_y + (dem.height - rows - 0.5) * dem.cell_size
    lc = (landcover.values[rows, cols].astype(int)
          if landcover is not None else np.zeros(len(rows), dtype=int))
    fc = (function.values[rows, cols].astype(int)
          if function is not None else np.zeros(len(rows), dtype=int))
    return {
        "slope": np.nan_to_num(derivs.slope_deg[rows, cols]),
        "roughness": np.nan_to_num(derivs.roughness[rows, cols]),
        "elevation": dem.values[rows, cols],
        "terrain": weiss[rows, cols],
        "landcover": lc,
        "function": fc,
        "xs": xs, "ys": ys, "rows": rows, "cols": cols,
    }


def cmd_cluster(args) -> int:
    cfg = _load_cfg(args)
    dem, landcover, function = _load_rasters(cfg)
    feats = _features_and_classes(cfg, dem, landcover, function)
    matrix = sampling.build_feature_matrix(
        feats["slope"], feats["roughness"], feats["elevation"],
        feats["terrain"], feats["function"], feats["landcover"],
    )
    assign, _ = sampling.kmeans(matrix, min(cfg.kmeans_k, len(matrix)), cfg.seed)
    cluster_vals = np.full((dem.height, dem.width), -1.0)
    cluster_vals[feats["rows"], feats["cols"]] = assign
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_agt1(RasterGrid(dem.origin_x, dem.origin_y, dem.cell_size,
                          dem.width, dem.height, -1.0, cluster_vals),
               out / "clusters.agt")
    counts = {int(c): int((assign == c).sum()) for c in np.unique(assign)}
    _dump_json({"k": len(counts), "sizes": counts}, out / "clusters.json")
    cfg.write_lock(out)
    print(f"clustered {len(assign)} pixels into {len(counts)} groups")
    return 0


def cmd_sample(args) -> int:
    cfg = _load_cfg(args)
    dem, landcover, function = _load_rasters(cfg)
    feats = _features_and_classes(cfg, dem, landcover, function)
    matrix = sampling.build_feature_matrix(
        feats["slope"], feats["roughness"], feats["elevation"],
        feats["terrain"], feats["function"], feats["landcover"],
    )
    assign, _ = sampling.kmeans(matrix, min(cfg.kmeans_k, len(matrix)), cfg.seed)
    design = sampling.design_from_rasters(
        assign, feats["terrain"], feats["landcover"], feats["function"],
        feats["elevation"], feats["xs"], feats["ys"],
        cfg.coeffs, cfg.sample_budget, cfg.s_min, cfg.d_min_m, cfg.seed,
        cfg.satellite,
    )
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    sampling.write_manifest(design, out / "manifest.csv")
    info = {
        "requested": cfg.sample_budget,
        "drawn": len(design.samples),
        "overflow": {str(k): v for k, v in design.overflow.items()},
        "shortfalls": {str(k): v for k, v in design.shortfalls.items()},
    }
    _dump_json(info, out / "sample.json")
    cfg.write_lock(out)
    print(f"drew {len(design.samples)} ground samples -> {out / 'manifest.csv'}")
    return 0


def _link_from_row(row, cfg) -> LinkSpec:
    return LinkSpec(
        ut_x=row["x"], ut_y=row["y"], elevation_deg=row["elev_deg"],
        azimuth_deg=row["az_deg"], altitude_km=row["alt_km"],
        frequency_hz=cfg.frequency_hz, ut_height_agl_m=cfg.ut_height_agl_m,
        point_id=row["point_id"],
    )


def cmd_trace(args) -> int:
    cfg = _load_cfg(args)
    dem, landcover, _ = _load_rasters(cfg)
    classes = landcover_table(cfg.landcover_overrides)
    tctx = TraceContext.from_grids(dem, landcover, classes=classes,
                                   truncation_margin_m=cfg.truncation_margin_m)
    rows = sampling.read_manifest(cfg.resolved_path(args.manifest))
    if args.point is not None:
        rows = [r for r in rows if r["point_id"] == args.point]
        if not rows:
            print(f"point_id {args.point} not in manifest", file=sys.stderr)
            return 1
        row = dict(rows[0])
        if args.elev is not None:
            row["elev_deg"] = args.elev
        if args.az is not None:
            row["az_deg"] = args.az
        if args.alt is not None:
            row["alt_km"] = args.alt
        profile = trace_link(_link_from_row(row, cfg), tctx)
        record = profile.to_record()
        text = json.dumps(record, indent=2, sort_keys=True)
        if args.out:
            Path(args.out).parent.mkdir(parents=True, exist_ok=True)
            Path(args.out).write_text(text + "\n")
        print(text)
        return 0
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "traces.jsonl", "w") as f:
        for row in rows:
            profile = trace_link(_link_from_row(row, cfg), tctx)
            f.write(json.dumps(profile.to_record(), sort_keys=True) + "\n")
    cfg.write_lock(out)
    print(f"traced {len(rows)} links -> {out / 'traces.jsonl'}")
    return 0


def cmd_estimate(args) -> int:
    cfg = _load_cfg(args)
    dem, landcover, _ = _load_rasters(cfg)
    ectx = _estimate_context(cfg, dem, landcover, with_reflection=args.reflection)
    rows = sampling.read_manifest(cfg.resolved_path(args.manifest))
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "estimates.jsonl", "w") as f:
        for row in rows:
            est = estimate_link(_link_from_row(row, cfg), ectx)
            rec = {
                "point_id": est.link.point_id,
                "x": est.link.ut_x, "y": est.link.ut_y,
                "elev": est.link.elevation_deg, "az": est.link.azimuth_deg,
                "alt_km": est.link.altitude_km, "verdict": est.verdict,
                **est.breakdown.to_dict(),
            }
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    cfg.write_lock(out)
    print(f"estimated {len(rows)} links -> {out / 'estimates.jsonl'}")
    return 0


def cmd_map(args) -> int:
    cfg = _load_cfg(args)
    dem, landcover, _ = _load_rasters(cfg)
    ectx = _estimate_context(cfg, dem, landcover, with_reflection=args.reflection)
    rows = sampling.read_manifest(cfg.resolved_path(args.manifest))
    samples = [
        sampling.GroundSample(r["point_id"], r["x"], r["y"], r["cluster"],
                              r["terrain"], r["landcover"], r["function"])
        for r in rows
    ]
    design = sampling.SampleDesign(
        samples=samples, quotas={}, achieved={}, overflow={},
        satellite_grid=sampling.satellite_grid(cfg.satellite),
    )
    threads = cfg.threads if cfg.threads > 0 else (os.cpu_count() or 1)
    rep = engine.region_sweep(design, ectx, cfg.frequency_hz,
                              cfg.ut_height_agl_m, threads=threads)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = report.write_obstruction_report(rep, out)
    cell = (dem.bounds[2] - dem.bounds[0]) / max(dem.width // 2, 1)
    written += report.write_attenuation_maps(rep, dem.bounds, cell, out)
    _dump_json(rep.summary, out / "sweep.json")
    if rep.failures:
        _dump_json(rep.failures, out / "failures.json")
    cfg.write_lock(out)
    print(f"swept {rep.summary['n_links']} links "
          f"({rep.summary['n_failed']} failed); outputs in {out}")
    return 0


def cmd_export_tiles(args) -> int:
    cfg = _load_cfg(args)
    dem, landcover, _ = _load_rasters(cfg)
    if landcover is None:
        print("export-tiles requires a landcover raster", file=sys.stderr)
        return 1
    derivs = terrain.derive_terrain(dem)
    records = [json.loads(line) for line in open(args.estimates)]
    if not records:
        print("no estimate records", file=sys.stderr)
        return 1
    normalizer = fit_normalizer([r["total_excess_db"] for r in records]
                                if len(records) >= 10 else
                                [r["total_excess_db"] for r in records] * 10)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    by_geom: dict = {}
    for r in records:
        by_geom.setdefault((r["elev"], r["az"], r["alt_km"]), []).append(r)
    written = []
    for geom, recs in sorted(by_geom.items()):
        obs = np.zeros((dem.height, dem.width))
        mask = np.zeros((dem.height, dem.width))
        for r in recs:
            row, col = dem.world_to_pixel(r["x"], r["y"])
            obs[row, col] = r["total_excess_db"]
            mask[row, col] = 1.0
        tile = tiles.build_tile(dem, derivs, landcover, obs, mask, geom, normalizer)
        name = f"tile_el{int(geom[0])}_az{int(geom[1])}_alt{int(geom[2])}.agx"
        tiles.write_tile(tile, out / name)
        written.append(str(out / name))
    cfg.write_lock(out)
    print(f"wrote {len(written)} tiles to {out}")
    return 0


def cmd_import_preds(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for grid, meta in tiles.import_predictions(args.tiles):
        stem = Path(meta.get("name", "pred")).stem
        name = (f"pred_el{int(meta['elev_deg'])}_az{int(meta['az_deg'])}"
                f"_alt{int(meta['alt_km'])}.agt")
        write_agt1(grid, out / name)
        print(f"imported {name}: mean {float(np.mean(grid.values)):.2f} dB, "
              f"observed fraction {meta['observed_fraction']:.3f}")
    return 0


def _read_series(path, column=None) -> np.ndarray:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise AgchanError(f"empty series file {path}")
    header = rows[0]
    start = 0
    col = 0
    try:
        float(header[0])
    except ValueError:
        start = 1
        if column is not None and column in header:
            col = header.index(column)
    return np.array([float(r[col]) for r in rows[start:] if r])


def cmd_metrics(args) -> int:
    a = _read_series(args.series_a, args.col)
    b = _read_series(args.series_b, args.col)
    if args.smooth > 1:
        a = moving_average(a, args.smooth)
        b = moving_average(b, args.smooth)
    if args.kind == "pearson":
        r, p = pearson(a, b)
        print(f"r={r:.6f} p={p:.3e} n={len(a)}")
    else:
        frac = sign_agreement(np.diff(a), np.diff(b))
        print(f"sign_agreement={frac:.6f} n={len(a) - 1}")
    if args.fig:
        report.write_series_comparison(a, b, ("series A", "series B"), args.fig)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="agchan", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, manifest=False):
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--dem")
        p.add_argument("--landcover")
        p.add_argument("--function")
        p.add_argument("--weather")
        p.add_argument("--out")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        if manifest:
            p.add_argument("--manifest", required=True, help="sample manifest CSV")

    p = sub.add_parser("ingest", help="validate rasters, optionally convert to AGT1")
    common(p)
    p.add_argument("--to-agt1", action="store_true")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("terrain", help="compute derivative layers")
    common(p)
    p.set_defaults(func=cmd_terrain)

    p = sub.add_parser("cluster", help="k-means region clustering")
    common(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("sample", help="stratified sample design")
    common(p)
    p.add_argument("--preset", choices=["los", "reflection", "balanced"])
    p.add_argument("-S", "--budget", type=int, help="total sample budget")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("trace", help="LOS/NLOS trace of one or all manifest links")
    common(p, manifest=True)
    p.add_argument("--point", type=int, help="point_id to trace")
    p.add_argument("--elev", type=float)
    p.add_argument("--az", type=float)
    p.add_argument("--alt", type=float)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("estimate", help="full loss breakdown per manifest link")
    common(p, manifest=True)
    p.add_argument("--reflection", action="store_true", help="enable multipath search")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("map", help="region sweep: obstruction rates + attenuation maps")
    common(p, manifest=True)
    p.add_argument("--reflection", action="store_true")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("export-tiles", help="write AGX1 training tiles")
    common(p)
    p.add_argument("--estimates", required=True, help="estimates.jsonl from estimate")
    p.set_defaults(func=cmd_export_tiles)

    p = sub.add_parser("import-preds", help="denormalize predicted tiles to AGT1")
    p.add_argument("--tiles", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_import_preds)

    p = sub.add_parser("metrics", help="series comparison metrics")
    p.add_argument("kind", choices=["pearson", "sign"])
    p.add_argument("series_a")
    p.add_argument("series_b")
    p.add_argument("--col", help="CSV column name")
    p.add_argument("--smooth", type=int, default=1, help="moving-average window")
    p.add_argument("--fig", help="write a comparison figure to this path")
    p.set_defaults(func=cmd_metrics)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code not in (0, None) else 0
    try:
        return args.func(args)
    except (AgchanError, ValueError, FileNotFoundError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failure
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
