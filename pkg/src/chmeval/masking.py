"""Validity masks and matched truth/prediction pixel pairs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MisalignedPair
from .raster import RasterTile, check_alignment

DEFAULT_MIN_HEIGHT = 2.0


@dataclass(frozen=True, eq=False)
class ValidMask:
    """Per-pixel validity plus the counts behind each exclusion.

    A pixel can be excluded for several reasons at once, so the exclusion
    counts need not sum to ``rows * cols - n_valid``.
    """

    bits: np.ndarray
    min_height: float
    n_truth_nodata: int = 0
    n_pred_nodata: int = 0
    n_below_height: int = 0

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def rows(self) -> int:
        return self.bits.shape[0]

    @property
    def cols(self) -> int:
        return self.bits.shape[1]

    @property
    def n_valid(self) -> int:
        return int(np.count_nonzero(self.bits))


@dataclass(frozen=True, eq=False)
class PixelPairs:
    y: np.ndarray
    y_hat: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        y_hat = np.asarray(self.y_hat, dtype=np.float64)
        if y.shape != y_hat.shape or y.ndim != 1:
            raise ValueError(f"pair arrays must be 1-D and equal length, got {y.shape} and {y_hat.shape}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "y_hat", y_hat)

    @property
    def n(self) -> int:
        return self.y.shape[0]


def _require_aligned(truth: RasterTile, pred: RasterTile) -> None:
    report = check_alignment(truth, pred)
    if not report:
        raise MisalignedPair(", ".join(report.reasons))


def build_mask(truth: RasterTile, pred: RasterTile, min_height: float = DEFAULT_MIN_HEIGHT) -> ValidMask:
    """Valid where both rasters hold real data and the *truth* height is at least ``min_height``."""
    _require_aligned(truth, pred)
    truth_ok = truth.valid_mask()
    pred_ok = pred.valid_mask()
    with np.errstate(invalid="ignore"):
        tall = truth.values >= min_height
    bits = truth_ok & pred_ok & tall
    return ValidMask(
        bits,
        float(min_height),
        n_truth_nodata=int(np.count_nonzero(~truth_ok)),
        n_pred_nodata=int(np.count_nonzero(~pred_ok)),
        n_below_height=int(np.count_nonzero(truth_ok & ~tall)),
    )


def extract_pairs(truth: RasterTile, pred: RasterTile, mask: ValidMask) -> PixelPairs:
    """Valid pixel pairs in row-major order."""
    if truth.shape != pred.shape or truth.shape != mask.bits.shape:
        raise MisalignedPair(f"shapes differ: truth {truth.shape}, pred {pred.shape}, mask {mask.bits.shape}")
    return PixelPairs(truth.values[mask.bits], pred.values[mask.bits])
