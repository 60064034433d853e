"""
Command-line entry point.

    chmeval evaluate CONFIG          per-tile metrics for every test tile, model and resolution
    chmeval report METRICS...        median summaries (overall and grouped)
    chmeval split MANIFEST           seeded train/test partition
    chmeval filter MANIFEST          keep tiles with imagery within a year of the lidar
    chmeval stitch INPUT OUTPUT      overlapping-window inference with blending

Exit codes: 0 success, 1 config error, 2 data error, 3 completed with skipped tiles.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .aggregate import (
    HeightBinSpec,
    SampleRecord,
    TileResult,
    height_bin_metrics,
    load_manifest,
    split_records,
    summarize,
    temporal_filter,
    write_manifest,
)
from .config import EvalConfig, RunConfig, load_config
from .errors import (
    ChmEvalError,
    ConfigError,
    ConfigMismatch,
    InvalidRecord,
    MissingColumns,
    NoValidTiles,
)
from .masking import build_mask, extract_pairs
from .metrics import METRIC_FIELDS, Hist2D, TileMetrics, evaluate_tile, hist2d
from .raster import RasterTile, check_alignment, read_tile
from .resample import downscale_pair

logger = logging.getLogger("chmeval")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SKIPS = 0, 1, 2, 3

METRICS_COLUMNS = (
    "tile_id", "model", "resolution", "ecoregion", "lidar_year", "n_valid", "empty",
    *METRIC_FIELDS, "n_truth_nodata", "n_pred_nodata", "min_height", "block_px", "config_hash",
)
BIN_COLUMNS = ("tile_id", "model", "resolution", "bin_lo", "bin_hi", "n", "me", "mae", "config_hash")
HIST_COLUMNS = ("model", "resolution", "truth_lo", "truth_hi", "pred_lo", "pred_hi", "count")
SKIP_COLUMNS = ("tile_id", "model", "resolution", "reason")
SUMMARY_FIELDS = ("mae", "me", "block_r2", "edge_error")
REQUIRED_COLUMNS = ("tile_id", "model", "resolution", "empty", *SUMMARY_FIELDS, "min_height", "block_px")


def fmt_float(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(float(v))


def fmt_res(r: float) -> str:
    return f"{r:g}"


def fmt_table(v: Optional[float]) -> str:
    if v is None:
        return ""
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


@dataclass
class TileOutcome:
    tile_id: str
    results: List[TileResult] = field(default_factory=list)
    bins: List[Tuple[str, float, list]] = field(default_factory=list)
    hists: Dict[Tuple[str, float], Hist2D] = field(default_factory=dict)
    skips: List[Tuple[str, str, str]] = field(default_factory=list)


def evaluate_record(rec: SampleRecord, models: Sequence[str], resolutions: Sequence[float], ev: EvalConfig) -> TileOutcome:
    """Evaluate one manifest record against every model at every resolution."""
    out = TileOutcome(rec.tile_id)
    bins = HeightBinSpec(ev.height_bins)
    try:
        truth = read_tile(rec.truth_path, default_nodata=ev.nodata_default, height_range=ev.height_range)
    except ChmEvalError as exc:
        out.skips.append(("*", "*", f"truth: {type(exc).__name__}: {exc}"))
        return out
    for model in models:
        path = rec.pred_paths.get(model)
        if path is None:
            out.skips.append((model, "*", "no prediction listed for model"))
            continue
        try:
            pred = read_tile(path, default_nodata=ev.nodata_default, height_range=ev.height_range)
            report = check_alignment(truth, pred, tol=1e-6)
            if not report:
                out.skips.append((model, "*", "misaligned: " + ",".join(report.reasons)))
                continue
        except ChmEvalError as exc:
            out.skips.append((model, "*", f"prediction: {type(exc).__name__}: {exc}"))
            continue
        for res in resolutions:
            try:
                t, p = _at_resolution(truth, pred, res)
                mask = build_mask(t, p, ev.min_height)
                metrics = evaluate_tile(t, p, ev, mask)
                out.bins.append((model, res, height_bin_metrics(t, p, mask, bins)))
                out.hists[(model, res)] = hist2d(extract_pairs(t, p, mask), ev.hist_bin_edges)
            except ChmEvalError as exc:
                out.skips.append((model, fmt_res(res), f"{type(exc).__name__}: {exc}"))
                continue
            out.results.append(TileResult.from_record(rec, model, res, metrics))
    return out


def _at_resolution(truth: RasterTile, pred: RasterTile, res: float):
    if math.isclose(res, truth.pixel_size, rel_tol=1e-9):
        return truth, pred
    return downscale_pair(truth, pred, res)


def cmd_evaluate(cfg: RunConfig, output_dir: Optional[Path] = None, jobs: Optional[int] = None) -> int:
    """Evaluate every test record; writes metrics, height-bin, histogram, skip and run files."""
    out_dir = Path(output_dir or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        records = load_manifest(cfg.manifest)
    except (InvalidRecord, OSError, ValueError) as exc:
        logger.error("manifest error: %s", exc)
        return EXIT_DATA
    test = sorted((r for r in records if r.split == "test"), key=lambda r: r.tile_id)
    if not test:
        logger.error("manifest has no test records")
        return EXIT_DATA
    ev = cfg.evaluation
    chash = cfg.config_hash()
    jobs = jobs or cfg.jobs

    def work(rec):
        return evaluate_record(rec, cfg.models, cfg.resolutions, ev)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(work, test))
    else:
        outcomes = [work(r) for r in test]

    metric_rows, bin_rows, skip_rows = [], [], []
    hists: Dict[Tuple[str, float], Hist2D] = {}
    for o in outcomes:
        for res in o.results:
            m = res.metrics
            metric_rows.append([
                res.tile_id, res.model, fmt_res(res.resolution), res.ecoregion, res.lidar_year,
                m.n_valid, "true" if m.empty else "false",
                *(fmt_float(getattr(m, f)) for f in METRIC_FIELDS),
                m.n_truth_nodata, m.n_pred_nodata, fmt_float(ev.min_height), ev.block_px, chash,
            ])
        for model, res, bins in o.bins:
            for b in bins:
                bin_rows.append([o.tile_id, model, fmt_res(res), fmt_float(b.lo), fmt_float(b.hi), b.n, fmt_float(b.me), fmt_float(b.mae), chash])
        for key, h in o.hists.items():
            hists[key] = hists[key] + h if key in hists else h
        for model, res, reason in o.skips:
            skip_rows.append([o.tile_id, model, res, reason])

    hist_rows = []
    overflow = {}
    order = {m: i for i, m in enumerate(cfg.models)}
    for (model, res) in sorted(hists, key=lambda k: (order[k[0]], k[1])):
        h = hists[(model, res)]
        e = h.bin_edges
        overflow[f"{model}@{fmt_res(res)}"] = h.overflow
        for i, j in zip(*np.nonzero(h.counts)):
            hist_rows.append([model, fmt_res(res), fmt_float(e[i]), fmt_float(e[i + 1]), fmt_float(e[j]), fmt_float(e[j + 1]), int(h.counts[i, j])])

    _write_csv(out_dir / "metrics.csv", METRICS_COLUMNS, metric_rows)
    _write_csv(out_dir / "height_bins.csv", BIN_COLUMNS, bin_rows)
    _write_csv(out_dir / "hist2d.csv", HIST_COLUMNS, hist_rows)
    _write_csv(out_dir / "skips.csv", SKIP_COLUMNS, skip_rows)
    status = EXIT_OK
    if skip_rows:
        status = EXIT_SKIPS if metric_rows else EXIT_DATA
    _write_json(out_dir / "run.json", {
        "command": "evaluate",
        "config": cfg.echo(),
        "config_hash": chash,
        "evaluation": ev.to_dict(),
        "n_test_tiles": len(test),
        "n_metric_rows": len(metric_rows),
        "n_skipped": len(skip_rows),
        "hist_overflow": overflow,
        "exit_status": status,
    })
    for row in skip_rows:
        logger.warning("skipped %s model=%s res=%s: %s", *row)
    return status


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def _parse_metric(v: str) -> Optional[float]:
    return None if v == "" else float(v)


def read_metrics(paths: Sequence[Path]) -> List[dict]:
    """Load metrics CSVs, refusing to mix evaluation settings."""
    rows: List[dict] = []
    settings = set()
    for path in paths:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = [c for c in REQUIRED_COLUMNS if c not in (reader.fieldnames or [])]
            if missing:
                raise MissingColumns(f"{path}: missing columns {missing}")
            for row in reader:
                settings.add((float(row["min_height"]), int(row["block_px"])))
                rows.append(row)
    if len(settings) > 1:
        raise ConfigMismatch(f"metric files use different (min_height, block_px): {sorted(settings)}")
    return rows


def _row_metrics(row: dict) -> TileMetrics:
    vals = {f: _parse_metric(row.get(f, "")) for f in METRIC_FIELDS}
    nan = math.nan
    return TileMetrics(
        **{f: (nan if v is None else v) for f, v in vals.items()},
        n_valid=int(row.get("n_valid") or 0),
        empty=row.get("empty", "false") == "true",
    )


def _group_table(rows: List[dict], key: Optional[str]):
    """Median of each summary field per (model, resolution[, key]) in deterministic order."""
    models: List[str] = []
    groups: Dict[tuple, Dict[str, List[float]]] = {}
    for row in rows:
        if row["model"] not in models:
            models.append(row["model"])
        m = _row_metrics(row)
        if m.empty:
            continue
        k = (row["model"], float(row["resolution"])) + ((row[key],) if key else ())
        g = groups.setdefault(k, {f: [] for f in SUMMARY_FIELDS + ("_n",)})
        g["_n"].append(1.0)
        for f in SUMMARY_FIELDS:
            v = m.get(f)
            if v is not None:
                g[f].append(v)
    if not groups:
        raise NoValidTiles("no non-empty tiles in metrics")
    order = {m: i for i, m in enumerate(models)}

    def sort_key(k):
        extra = ()
        if key:
            try:
                extra = (0, float(k[2]), "")
            except ValueError:
                extra = (1, 0.0, k[2])
        return (order[k[0]], k[1]) + extra

    return [(k, groups[k]) for k in sorted(groups, key=sort_key)]


def cmd_report(metrics_paths: Sequence[Path], group_keys: Sequence[str] = ("ecoregion", "lidar_year"), output_dir: Optional[Path] = None, bins_path: Optional[Path] = None) -> Dict[str, Path]:
    """Write the overall summary table plus one table per group key.

    ``overall.csv`` columns: model,resolution,n_tiles,mae,me,block_r2,edge_error
    (medians across non-empty tiles, two decimals). ``by_<key>.csv`` inserts
    the group column after resolution. ``summary_long.csv`` carries the full
    box-plot statistics in long format.
    """
    metrics_paths = [Path(p) for p in metrics_paths]
    out_dir = Path(output_dir or metrics_paths[0].parent)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = read_metrics(metrics_paths)
    for key in group_keys:
        if rows and key not in rows[0]:
            raise MissingColumns(f"cannot group by {key!r}: column absent")
    written = {}
    long_rows = []
    for key in (None, *group_keys):
        table = _group_table(rows, key)
        header = ["model", "resolution"] + ([key] if key else []) + ["n_tiles", *SUMMARY_FIELDS]
        out_rows = []
        for k, g in table:
            medians = [fmt_table(summarize(g[f]).median) if g[f] else "" for f in SUMMARY_FIELDS]
            out_rows.append([k[0], fmt_res(k[1]), *k[2:], len(g["_n"]), *medians])
            for f in SUMMARY_FIELDS:
                if g[f]:
                    s = summarize(g[f])
                    long_rows.append([key or "overall", k[2] if key else "all", k[0], fmt_res(k[1]), f, s.n_tiles,
                                      *(fmt_float(x) for x in (s.median, s.q1, s.q3, s.whisker_lo, s.whisker_hi))])
        name = f"by_{key}.csv" if key else "overall.csv"
        _write_csv(out_dir / name, header, out_rows)
        written[key or "overall"] = out_dir / name
    _write_csv(out_dir / "summary_long.csv",
               ["group_key", "group", "model", "resolution", "field", "n_tiles", "median", "q1", "q3", "whisker_lo", "whisker_hi"],
               long_rows)
    written["summary_long"] = out_dir / "summary_long.csv"
    tiles_long = []
    for row in rows:
        if row["empty"] == "true":
            continue
        for f in METRIC_FIELDS:
            if row.get(f, "") != "":
                tiles_long.append([row["tile_id"], row["model"], row["resolution"], row.get("ecoregion", ""), row.get("lidar_year", ""), f, row[f]])
    _write_csv(out_dir / "tiles_long.csv", ["tile_id", "model", "resolution", "ecoregion", "lidar_year", "field", "value"], tiles_long)
    written["tiles_long"] = out_dir / "tiles_long.csv"
    if bins_path is not None:
        written["height_bin"] = _height_bin_report(Path(bins_path), out_dir)
    hashes = sorted({r.get("config_hash", "") for r in rows} - {""})
    _write_json(out_dir / "report.json", {
        "command": "report",
        "config_hashes": hashes,
        "min_height": float(rows[0]["min_height"]) if rows else None,
        "block_px": int(rows[0]["block_px"]) if rows else None,
        "group_keys": list(group_keys),
        "inputs": [p.name for p in metrics_paths],
    })
    return written


def _height_bin_report(path: Path, out_dir: Path) -> Path:
    groups: Dict[tuple, Dict[str, List[float]]] = {}
    models: List[str] = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["model"] not in models:
                models.append(row["model"])
            if int(row["n"]) == 0:
                continue
            k = (row["model"], float(row["resolution"]), float(row["bin_lo"]), float(row["bin_hi"]))
            g = groups.setdefault(k, {"me": [], "mae": []})
            g["me"].append(float(row["me"]))
            g["mae"].append(float(row["mae"]))
    order = {m: i for i, m in enumerate(models)}
    out_rows = []
    for k in sorted(groups, key=lambda k: (order[k[0]], k[1], k[2])):
        g = groups[k]
        out_rows.append([k[0], fmt_res(k[1]), fmt_res(k[2]), fmt_res(k[3]), len(g["me"]),
                         fmt_table(summarize(g["me"]).median), fmt_table(summarize(g["mae"]).median)])
    target = out_dir / "by_height_bin.csv"
    _write_csv(target, ["model", "resolution", "bin_lo", "bin_hi", "n_tiles", "me", "mae"], out_rows)
    return target


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chmeval", description="Canopy height model evaluation toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("evaluate", help="per-tile metrics for test tiles")
    e.add_argument("config")
    e.add_argument("--output-dir")
    e.add_argument("--jobs", type=int)

    r = sub.add_parser("report", help="median summaries from metrics files")
    r.add_argument("metrics", nargs="+")
    r.add_argument("--group-by", default="ecoregion,lidar_year", help="comma-separated keys (empty for none)")
    r.add_argument("--bins", help="height_bins.csv from evaluate")
    r.add_argument("--output-dir")

    s = sub.add_parser("split", help="seeded train/test partition of a manifest")
    s.add_argument("manifest")
    s.add_argument("--test-fraction", type=float, default=0.15)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--output", required=True)

    f = sub.add_parser("filter", help="drop tiles whose imagery is far from the lidar year")
    f.add_argument("manifest")
    f.add_argument("--max-gap", type=int, default=1)
    f.add_argument("--output", required=True)

    t = sub.add_parser("stitch", help="overlapping-window inference over a large raster")
    t.add_argument("input")
    t.add_argument("output")
    t.add_argument("--window", type=int, default=1536)
    t.add_argument("--stride", type=int, help="default: window / 2")
    t.add_argument("--taper", choices=("cosine", "uniform"), default="cosine")
    t.add_argument("--provider", default="identity", help="identity | shift:C | mean:K | cmd:'<command>'")
    t.add_argument("--jobs", type=int, default=1)
    t.add_argument("--report", help="write the stitch report as JSON here")
    return p


def _run_stitch(args) -> int:
    from .providers import SubprocessProvider, from_spec
    from .stitch import GeoTiffSink, GeoTiffSource, plan_windows, stitch_run

    source = GeoTiffSource(args.input)
    try:
        with source:
            provider = from_spec(args.provider)
            if isinstance(provider, SubprocessProvider):
                provider.transform = source.transform
            rows, cols = source.shape
            plan = plan_windows(rows, cols, args.window, args.stride, args.taper)
            sink = GeoTiffSink(args.output, rows, cols, source.transform, source.nodata)
            report = stitch_run(source, plan, provider, sink, jobs=args.jobs)
    except ChmEvalError as exc:
        logger.error("stitch failed: %s", exc)
        return EXIT_DATA
    if args.report:
        _write_json(Path(args.report), report.to_dict())
    logger.info("stitched %d windows, peak buffered rows %d", report.n_windows, report.peak_buffered_rows)
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "evaluate":
            cfg = load_config(args.config)
            return cmd_evaluate(cfg, args.output_dir and Path(args.output_dir), args.jobs)
        if args.command == "report":
            keys = [k for k in args.group_by.split(",") if k]
            cmd_report([Path(m) for m in args.metrics], keys, args.output_dir and Path(args.output_dir),
                       args.bins and Path(args.bins))
            return EXIT_OK
        if args.command == "split":
            records = load_manifest(args.manifest)
            train, test = split_records(records, args.test_fraction, args.seed)
            test_ids = {r.tile_id for r in test}
            out = [r.with_split("test" if r.tile_id in test_ids else "train") for r in records]
            write_manifest(out, args.output)
            print(f"train={len(train)} test={len(test)}")
            return EXIT_OK
        if args.command == "filter":
            records = load_manifest(args.manifest)
            kept = temporal_filter(records, args.max_gap)
            write_manifest(kept, args.output)
            print(f"kept={len(kept)} dropped={len(records) - len(kept)}")
            return EXIT_OK
        if args.command == "stitch":
            return _run_stitch(args)
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    except (MissingColumns, ConfigMismatch) as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except (ChmEvalError, OSError, ValueError) as exc:
        logger.error("data error: %s", exc)
        return EXIT_DATA
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
