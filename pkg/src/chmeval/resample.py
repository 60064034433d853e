"""
Resolution changes with nearest, bilinear and block-average kernels.

All kernels use the pixel-center convention: target pixel ``j`` has its center
at ``(j + 0.5) * target_size`` from the shared origin, and source pixel ``i``
at ``(i + 0.5) * source_size``. Output grids keep the input origin and are
sized to cover the full input extent.
"""

from __future__ import annotations

import math
from enum import Enum
from typing import Tuple

import numpy as np

from .errors import EmptyInput, MisalignedPair, NonIntegerBlockFactor
from .raster import RasterTile, check_alignment


class ResampleMethod(str, Enum):
    NEAREST = "nearest"
    BILINEAR = "bilinear"
    AVERAGE = "average"


def _out_len(n: int, ratio: float) -> int:
    # ratio = target / source; tolerate float noise like 30 / 0.5
    exact = n / ratio
    nearest = round(exact)
    if abs(exact - nearest) < 1e-9 * max(1.0, exact):
        return max(int(nearest), 1)
    return max(math.ceil(exact), 1)


def block_factor(source_size: float, target_size: float) -> int:
    """Integer downscale factor ``target / source``; raises when it is not a positive integer."""
    ratio = target_size / source_size
    k = round(ratio)
    if k < 1 or abs(ratio - k) > 1e-9 * ratio:
        raise NonIntegerBlockFactor(
            f"average resampling needs an integer factor >= 1, got {target_size}/{source_size} = {ratio}"
        )
    return int(k)


def _nearest_index(n_out: int, ratio: float, n_in: int) -> np.ndarray:
    centers = (np.arange(n_out) + 0.5) * ratio
    # a center exactly on a source boundary goes to the higher index
    return np.clip(np.floor(centers + 1e-12), 0, n_in - 1).astype(np.intp)


def _bilinear_coords(n_out: int, ratio: float, n_in: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    u = (np.arange(n_out) + 0.5) * ratio - 0.5
    u = np.clip(u, 0.0, n_in - 1)
    i0 = np.floor(u).astype(np.intp)
    frac = u - i0
    snap = frac < 1e-12
    frac[snap] = 0.0
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, frac


def _nearest(tile: RasterTile, rx: float, ry: float) -> np.ndarray:
    rows = _out_len(tile.rows, ry)
    cols = _out_len(tile.cols, rx)
    ri = _nearest_index(rows, ry, tile.rows)
    ci = _nearest_index(cols, rx, tile.cols)
    return tile.values[np.ix_(ri, ci)]


def _lerp_axis(values: np.ndarray, valid: np.ndarray, i0, i1, frac, axis: int):
    """Interpolate along one axis. Zero-weight neighbours do not contribute."""
    a = np.take(values, i0, axis=axis)
    b = np.take(values, i1, axis=axis)
    va = np.take(valid, i0, axis=axis)
    vb = np.take(valid, i1, axis=axis)
    shape = [1, 1]
    shape[axis] = -1
    f = frac.reshape(shape)
    # a + f * (b - a) stays inside [min(a, b), max(a, b)] and is exact when a == b
    out = a + f * (b - a)
    ok = va & (vb | (f == 0.0))
    out = np.where(f == 0.0, a, out)
    return out, ok


def _bilinear(tile: RasterTile, rx: float, ry: float) -> np.ndarray:
    rows = _out_len(tile.rows, ry)
    cols = _out_len(tile.cols, rx)
    valid = tile.valid_mask()
    vals = np.where(valid, tile.values, 0.0).astype(np.float64)
    r0, r1, fr = _bilinear_coords(rows, ry, tile.rows)
    c0, c1, fc = _bilinear_coords(cols, rx, tile.cols)
    tmp, ok = _lerp_axis(vals, valid, r0, r1, fr, axis=0)
    out, ok = _lerp_axis(tmp, ok, c0, c1, fc, axis=1)
    return np.where(ok, out, tile.nodata).astype(np.float32)


def _average(tile: RasterTile, kx: int, ky: int) -> np.ndarray:
    rows = -(-tile.rows // ky)
    cols = -(-tile.cols // kx)
    valid = tile.valid_mask()
    vals = np.zeros((rows * ky, cols * kx), dtype=np.float64)
    cnt = np.zeros((rows * ky, cols * kx), dtype=np.int64)
    vals[: tile.rows, : tile.cols] = np.where(valid, tile.values, 0.0)
    cnt[: tile.rows, : tile.cols] = valid
    sums = vals.reshape(rows, ky, cols, kx).sum(axis=(1, 3))
    counts = cnt.reshape(rows, ky, cols, kx).sum(axis=(1, 3))
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = sums / counts
    return np.where(counts > 0, mean, tile.nodata).astype(np.float32)


def resample(tile: RasterTile, target_pixel_size: float, method="nearest") -> RasterTile:
    """Resample ``tile`` to square pixels of ``target_pixel_size`` map units.

    Bilinear output is nodata wherever a contributing neighbour is nodata.
    Average is a downscaler only; it takes the mean of the valid source pixels
    in each target cell and is nodata only when none are valid.
    """
    method = ResampleMethod(method)
    if not target_pixel_size > 0:
        raise ValueError(f"target pixel size must be positive, got {target_pixel_size}")
    if tile.rows == 0 or tile.cols == 0:
        raise EmptyInput("cannot resample an empty raster")
    tr = tile.transform
    rx = target_pixel_size / tr.pixel_size_x
    ry = target_pixel_size / tr.pixel_size_y
    if method is ResampleMethod.AVERAGE:
        kx = block_factor(tr.pixel_size_x, target_pixel_size)
        ky = block_factor(tr.pixel_size_y, target_pixel_size)
        out = _average(tile, kx, ky)
    elif method is ResampleMethod.BILINEAR:
        out = _bilinear(tile, rx, ry)
    else:
        out = _nearest(tile, rx, ry)
    return RasterTile(out, tr.with_pixel_size(target_pixel_size), tile.nodata)


def downscale_pair(truth: RasterTile, pred: RasterTile, target_pixel_size: float) -> Tuple[RasterTile, RasterTile]:
    """Block-average an aligned truth/prediction pair to a coarser common grid."""
    report = check_alignment(truth, pred)
    if not report:
        raise MisalignedPair(f"cannot downscale misaligned pair: {', '.join(report.reasons)}")
    return (
        resample(truth, target_pixel_size, ResampleMethod.AVERAGE),
        resample(pred, target_pixel_size, ResampleMethod.AVERAGE),
    )
