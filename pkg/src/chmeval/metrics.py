"""
Pixel-wise error metrics for canopy height rasters.

Sums are accumulated in float64. The sign convention for mean error is
prediction minus truth, so underestimation is negative.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .config import EvalConfig
from .errors import (
    BadBinEdges,
    DegenerateVariance,
    EmptyPairs,
    MetricError,
    MisalignedPair,
    TileTooSmall,
    ZeroTruth,
)
from .masking import PixelPairs, ValidMask, build_mask, extract_pairs
from .raster import RasterTile

METRIC_FIELDS = ("mae", "rmse", "me", "mape", "r2", "block_r2", "edge_error")


def _require_pairs(pairs: PixelPairs) -> None:
    if pairs.n == 0:
        raise EmptyPairs("no valid pixel pairs")


def mae(pairs: PixelPairs) -> float:
    _require_pairs(pairs)
    return float(np.mean(np.abs(pairs.y - pairs.y_hat)))


def rmse(pairs: PixelPairs) -> float:
    _require_pairs(pairs)
    d = pairs.y - pairs.y_hat
    return float(np.sqrt(np.mean(d * d)))


def mean_error(pairs: PixelPairs) -> float:
    _require_pairs(pairs)
    return float(np.mean(pairs.y_hat - pairs.y))


def mape(pairs: PixelPairs) -> float:
    """Mean absolute percent error, relative to truth."""
    _require_pairs(pairs)
    if np.any(pairs.y == 0):
        raise ZeroTruth("MAPE is undefined for zero truth heights; mask them first")
    return float(100.0 * np.mean(np.abs(pairs.y - pairs.y_hat) / np.abs(pairs.y)))


def r2(pairs: PixelPairs) -> float:
    if pairs.n < 2:
        raise DegenerateVariance(f"R2 needs at least 2 pairs, got {pairs.n}")
    d = pairs.y - pairs.y_hat
    sse = float(np.sum(d * d))
    c = pairs.y - pairs.y.mean()
    sst = float(np.sum(c * c))
    if sst == 0.0:
        raise DegenerateVariance("truth is constant")
    return 1.0 - sse / sst


@dataclass(frozen=True)
class BlockSpec:
    block_px: int = 40

    def __post_init__(self):
        if self.block_px < 1:
            raise ValueError(f"block_px must be >= 1, got {self.block_px}")


def _check_shapes(truth: RasterTile, pred: RasterTile, mask: ValidMask) -> None:
    if truth.shape != pred.shape or truth.shape != mask.bits.shape:
        raise MisalignedPair(f"shapes differ: truth {truth.shape}, pred {pred.shape}, mask {mask.bits.shape}")


def block_r2(truth: RasterTile, pred: RasterTile, mask: ValidMask, spec: BlockSpec = BlockSpec()) -> float:
    """R2 whose baseline is each pixel's own block mean instead of the tile mean.

    Blocks are ``block_px`` squares anchored at the tile origin; trailing
    partial blocks are kept. Only valid pixels enter any sum.
    """
    _check_shapes(truth, pred, mask)
    rows, cols = truth.shape
    bp = spec.block_px
    nbc = -(-cols // bp)
    rr, cc = np.nonzero(mask.bits)
    if rr.size == 0:
        raise DegenerateVariance("no valid pixels")
    block = (rr // bp) * nbc + (cc // bp)
    y = truth.values[rr, cc].astype(np.float64)
    y_hat = pred.values[rr, cc].astype(np.float64)
    nblocks = (-(-rows // bp)) * nbc
    counts = np.bincount(block, minlength=nblocks)
    sums = np.bincount(block, weights=y, minlength=nblocks)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / counts
    dev = y - means[block]
    sst = float(np.sum(dev * dev))
    if sst == 0.0:
        raise DegenerateVariance("every block is internally constant")
    d = y - y_hat
    return 1.0 - float(np.sum(d * d)) / sst


def sobel_magnitude(values: np.ndarray) -> np.ndarray:
    """Gradient magnitude from the 3x3 Sobel pair, replicate-padded at the borders."""
    a = np.pad(np.asarray(values, dtype=np.float64), 1, mode="edge")
    # rows above / at / below and columns left / at / right of each pixel
    up, mid, down = a[:-2], a[1:-1], a[2:]
    smooth_rows = up + 2.0 * mid + down
    gx = smooth_rows[:, 2:] - smooth_rows[:, :-2]
    left, center, right = a[:, :-2], a[:, 1:-1], a[:, 2:]
    smooth_cols = left + 2.0 * center + right
    gy = smooth_cols[2:, :] - smooth_cols[:-2, :]
    return np.sqrt(gx * gx + gy * gy)


def edge_error(truth: RasterTile, pred: RasterTile, mask: ValidMask) -> float:
    """Mean absolute difference of Sobel magnitudes over valid pixels.

    Invalid pixels are zero-filled in both rasters before filtering.
    """
    _check_shapes(truth, pred, mask)
    if truth.rows < 3 or truth.cols < 3:
        raise TileTooSmall(f"edge error needs at least 3x3 pixels, got {truth.shape}")
    n = mask.n_valid
    if n == 0:
        raise EmptyPairs("no valid pixels")
    et = sobel_magnitude(np.where(mask.bits, truth.values, 0.0))
    ep = sobel_magnitude(np.where(mask.bits, pred.values, 0.0))
    return float(np.sum(np.abs(ep - et)[mask.bits]) / n)


@dataclass(frozen=True, eq=False)
class Hist2D:
    """Truth (rows) vs prediction (columns) counts over half-open bins ``[e_k, e_k+1)``."""

    bin_edges: np.ndarray
    counts: np.ndarray
    overflow: int = 0

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.overflow

    def __add__(self, other: "Hist2D") -> "Hist2D":
        if not np.array_equal(self.bin_edges, other.bin_edges):
            raise BadBinEdges("cannot add histograms with different edges")
        return Hist2D(self.bin_edges, self.counts + other.counts, self.overflow + other.overflow)


def _check_edges(edges) -> np.ndarray:
    edges = np.asarray(edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2:
        raise BadBinEdges("need at least two bin edges")
    if not np.all(np.isfinite(edges)) or not np.all(np.diff(edges) > 0):
        raise BadBinEdges("bin edges must be finite and strictly ascending")
    return edges


def hist2d(pairs: PixelPairs, bin_edges: Sequence[float]) -> Hist2D:
    edges = _check_edges(bin_edges)
    nb = edges.size - 1
    ti = np.searchsorted(edges, pairs.y, side="right") - 1
    pi = np.searchsorted(edges, pairs.y_hat, side="right") - 1
    inside = (ti >= 0) & (ti < nb) & (pi >= 0) & (pi < nb)
    flat = np.bincount(ti[inside] * nb + pi[inside], minlength=nb * nb)
    return Hist2D(edges, flat.reshape(nb, nb).astype(np.int64), int(np.count_nonzero(~inside)))


@dataclass(frozen=True)
class TileMetrics:
    mae: float
    rmse: float
    me: float
    mape: float
    r2: float
    block_r2: float
    edge_error: float
    n_valid: int
    empty: bool = False
    n_truth_nodata: int = 0
    n_pred_nodata: int = 0

    def to_dict(self) -> dict:
        """Not-a-value fields become ``None`` (serialized as null / empty cell)."""
        out = asdict(self)
        for k in METRIC_FIELDS:
            if isinstance(out[k], float) and math.isnan(out[k]):
                out[k] = None
        return out

    def get(self, name: str) -> Optional[float]:
        v = getattr(self, name)
        return None if (isinstance(v, float) and math.isnan(v)) else v


def _or_nan(fn, *args) -> float:
    try:
        return fn(*args)
    except MetricError:
        return math.nan


def evaluate_tile(truth: RasterTile, pred: RasterTile, config: EvalConfig = EvalConfig(), mask: Optional[ValidMask] = None) -> TileMetrics:
    """All metrics for one aligned pair. Undefined metrics come back as NaN."""
    if mask is None:
        mask = build_mask(truth, pred, config.min_height)
    pairs = extract_pairs(truth, pred, mask)
    nan = math.nan
    if pairs.n == 0:
        return TileMetrics(nan, nan, nan, nan, nan, nan, nan, 0, True, mask.n_truth_nodata, mask.n_pred_nodata)
    return TileMetrics(
        mae=mae(pairs),
        rmse=rmse(pairs),
        me=mean_error(pairs),
        mape=_or_nan(mape, pairs),
        r2=_or_nan(r2, pairs),
        block_r2=_or_nan(block_r2, truth, pred, mask, BlockSpec(config.block_px)),
        edge_error=_or_nan(edge_error, truth, pred, mask),
        n_valid=pairs.n,
        empty=False,
        n_truth_nodata=mask.n_truth_nodata,
        n_pred_nodata=mask.n_pred_nodata,
    )
