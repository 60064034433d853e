"""Seeded synthetic canopy-height tiles, model predictions and manifests."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Sequence

import numpy as np
import yaml

from .aggregate import SampleRecord, write_manifest
from .raster import DEFAULT_NODATA, GeoTransform, RasterTile, write_tile

# height bias (m), blur passes and noise sd (m) per synthetic model
MODEL_PROFILES: Dict[str, tuple] = {
    "VibrantVS": (-1.1, 1, 1.0),
    "Meta": (-4.0, 2, 2.0),
    "LANDFIRE": (0.9, 6, 3.0),
    "ETH": (5.6, 4, 3.0),
}
ECOREGIONS = ("6.2.7", "6.2.8", "6.2.12", "7.1.8")


def canopy(rows: int, cols: int, rng: np.random.Generator, n_trees: int = None, max_height: float = 55.0) -> np.ndarray:
    """Gaussian tree crowns on near-zero ground."""
    if n_trees is None:
        n_trees = max(rows * cols // 150, 1)
    yy, xx = np.mgrid[0:rows, 0:cols]
    chm = rng.uniform(0.0, 0.8, size=(rows, cols))
    cy = rng.uniform(0, rows, n_trees)
    cx = rng.uniform(0, cols, n_trees)
    h = rng.gamma(3.0, max_height / 9.0, n_trees).clip(3.0, max_height)
    radius = 1.5 + 0.12 * h
    for y0, x0, hh, r in zip(cy, cx, h, radius):
        sl_r = slice(max(int(y0 - 3 * r), 0), min(int(y0 + 3 * r) + 1, rows))
        sl_c = slice(max(int(x0 - 3 * r), 0), min(int(x0 + 3 * r) + 1, cols))
        d2 = (yy[sl_r, sl_c] - y0) ** 2 + (xx[sl_r, sl_c] - x0) ** 2
        np.maximum(chm[sl_r, sl_c], hh * np.exp(-d2 / (2 * r * r)), out=chm[sl_r, sl_c])
    return chm.astype(np.float32)


def _blur(a: np.ndarray, passes: int) -> np.ndarray:
    out = a.astype(np.float64)
    for _ in range(passes):
        p = np.pad(out, 1, mode="edge")
        out = (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] + 4 * p[1:-1, 1:-1]) / 8.0
    return out


def predict(truth: np.ndarray, model: str, rng: np.random.Generator) -> np.ndarray:
    bias, passes, sd = MODEL_PROFILES[model]
    pred = _blur(truth, passes) + bias + rng.normal(0.0, sd, truth.shape)
    return np.clip(pred, 0.0, 120.0).astype(np.float32)


def punch_nodata(a: np.ndarray, frac: float, nodata: float = DEFAULT_NODATA) -> np.ndarray:
    """Blank a band along one edge, the way flight-line gaps look."""
    out = a.copy()
    if frac > 0:
        k = int(round(frac * a.shape[1]))
        if k:
            out[:, -k:] = nodata
    return out


def make_corpus(
    root,
    n_tiles: int = 12,
    tile_px: int = 180,
    models: Sequence[str] = ("VibrantVS", "Meta"),
    seed: int = 0,
    pixel_size: float = 0.5,
    resolutions: Sequence[float] = (0.5, 10.0, 30.0),
    test_fraction: float = 1.0,
) -> Path:
    """Write tiles, a CSV manifest and a run config under ``root``; returns the config path."""
    root = Path(root)
    (root / "tiles").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n_tiles):
        tid = f"tile_{i:04d}"
        ox, oy = 500_000.0 + i * tile_px * pixel_size, 4_200_000.0
        tr = GeoTransform(ox, oy, pixel_size, pixel_size, "EPSG:32610")
        truth = canopy(tile_px, tile_px, rng)
        if i % 4 == 3:
            truth = punch_nodata(truth, 0.2)
        write_tile(RasterTile(truth, tr), root / "tiles" / f"{tid}_lidar.tif")
        preds = {}
        for m in models:
            valid = truth != DEFAULT_NODATA
            p = predict(np.where(valid, truth, 0.0), m, rng)
            write_tile(RasterTile(p, tr), root / "tiles" / f"{tid}_{m}.tif")
            preds[m] = str(root / "tiles" / f"{tid}_{m}.tif")
        a, b = rng.choice(len(ECOREGIONS), 2, replace=False)
        f = float(np.round(rng.uniform(0.3, 1.0), 3))
        fractions = {ECOREGIONS[a]: f, ECOREGIONS[b]: float(np.round(1.0 - f, 3))} if f < 1.0 else {ECOREGIONS[a]: 1.0}
        lidar_year = int(rng.integers(2015, 2022))
        naip_year = lidar_year + int(rng.integers(-1, 2))
        split = "test" if rng.uniform() < test_fraction else "train"
        records.append(SampleRecord(tid, str(root / "tiles" / f"{tid}_lidar.tif"), preds, lidar_year, naip_year, fractions, split))
    write_manifest(records, root / "manifest.csv")
    config = {
        "config_version": 1,
        "manifest": "manifest.csv",
        "models": list(models),
        "resolutions": [float(r) for r in resolutions],
        "output_dir": "out",
        "seed": seed,
        "jobs": 1,
        "evaluation": {"min_height": 2.0, "block_px": 40},
    }
    path = root / "config.yaml"
    path.write_text(yaml.safe_dump(config, sort_keys=False))
    return path
