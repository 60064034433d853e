"""Canopy height model evaluation and tiled-inference stitching."""

from .aggregate import (
    HeightBinSpec,
    SampleRecord,
    SummaryStats,
    TileResult,
    assign_ecoregion,
    group_summary,
    height_bin_metrics,
    load_manifest,
    split_records,
    temporal_filter,
)
from .config import EvalConfig, RunConfig, load_config
from .masking import PixelPairs, ValidMask, build_mask, extract_pairs
from .metrics import (
    BlockSpec,
    Hist2D,
    TileMetrics,
    block_r2,
    edge_error,
    evaluate_tile,
    hist2d,
    mae,
    mape,
    mean_error,
    r2,
    rmse,
)
from .raster import GeoTransform, RasterTile, Window, check_alignment, read_tile, write_tile
from .resample import ResampleMethod, downscale_pair, resample
from .stitch import StitchPlan, blend_weights, plan_windows, stitch_array, stitch_run

__version__ = "0.1.0"
