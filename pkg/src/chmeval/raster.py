"""
Single-band height rasters: in-memory tiles, GeoTIFF read/write, grid alignment.

Heights are held as float32. The nodata sentinel is always compared with exact
equality (NaN sentinels are matched with ``isnan``).
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import rasterio
from rasterio.crs import CRS
from rasterio.errors import CRSError, RasterioIOError
from rasterio.transform import Affine
from rasterio.windows import Window as RioWindow

from .errors import (
    BandOutOfRange,
    HeightOutOfRange,
    IoFailure,
    MalformedRaster,
    MissingFile,
    RejectedEmptyRaster,
)

logger = logging.getLogger(__name__)

DEFAULT_NODATA = -9999.0
DEFAULT_HEIGHT_RANGE = (-10.0, 200.0)
_CRS_TAG = "CHMEVAL_CRS_ID"


@dataclass(frozen=True)
class GeoTransform:
    """North-up grid geometry. ``origin_*`` is the upper-left corner of pixel (0, 0)."""

    origin_x: float
    origin_y: float
    pixel_size_x: float
    pixel_size_y: float
    crs_id: str = ""

    def __post_init__(self):
        if not (self.pixel_size_x > 0 and self.pixel_size_y > 0):
            raise ValueError(
                f"pixel sizes must be positive, got ({self.pixel_size_x}, {self.pixel_size_y})"
            )

    def pixel_to_map(self, col: float, row: float) -> Tuple[float, float]:
        """Map coordinates of the upper-left corner of pixel ``(col, row)``."""
        return (
            self.origin_x + col * self.pixel_size_x,
            self.origin_y - row * self.pixel_size_y,
        )

    def map_to_pixel(self, x: float, y: float) -> Tuple[int, int]:
        """Index ``(col, row)`` of the pixel containing map point ``(x, y)``."""
        fc = (x - self.origin_x) / self.pixel_size_x
        fr = (self.origin_y - y) / self.pixel_size_y
        # snap values within float noise of an integer so corners map back exactly
        col = round(fc) if abs(fc - round(fc)) < 1e-6 else math.floor(fc)
        row = round(fr) if abs(fr - round(fr)) < 1e-6 else math.floor(fr)
        return int(col), int(row)

    def with_pixel_size(self, size_x: float, size_y: Optional[float] = None) -> "GeoTransform":
        return GeoTransform(
            self.origin_x,
            self.origin_y,
            size_x,
            size_x if size_y is None else size_y,
            self.crs_id,
        )

    def shifted(self, col_off: int, row_off: int) -> "GeoTransform":
        x, y = self.pixel_to_map(col_off, row_off)
        return GeoTransform(x, y, self.pixel_size_x, self.pixel_size_y, self.crs_id)

    def to_affine(self) -> Affine:
        return Affine(self.pixel_size_x, 0.0, self.origin_x, 0.0, -self.pixel_size_y, self.origin_y)

    @classmethod
    def from_affine(cls, affine: Affine, crs_id: str = "") -> "GeoTransform":
        if affine.b != 0 or affine.d != 0:
            raise MalformedRaster("rotated geotransforms are not supported")
        if affine.e >= 0:
            raise MalformedRaster("expected a north-up raster (negative y pixel size)")
        return cls(affine.c, affine.f, affine.a, -affine.e, crs_id)


@dataclass(frozen=True)
class Window:
    row_off: int
    col_off: int
    rows: int
    cols: int
    partial: bool = False

    @property
    def row_end(self) -> int:
        return self.row_off + self.rows

    @property
    def col_end(self) -> int:
        return self.col_off + self.cols

    def fits(self, rows: int, cols: int) -> bool:
        return (
            self.row_off >= 0
            and self.col_off >= 0
            and self.row_end <= rows
            and self.col_end <= cols
        )

    def clip(self, rows: int, cols: int) -> "Window":
        """Intersect with a ``rows x cols`` parent; flags the result partial if anything was cut."""
        r0, c0 = max(self.row_off, 0), max(self.col_off, 0)
        r1, c1 = min(self.row_end, rows), min(self.col_end, cols)
        clipped = Window(r0, c0, max(r1 - r0, 0), max(c1 - c0, 0))
        if clipped != Window(self.row_off, self.col_off, self.rows, self.cols):
            return Window(clipped.row_off, clipped.col_off, clipped.rows, clipped.cols, True)
        return Window(self.row_off, self.col_off, self.rows, self.cols, self.partial)

    def slices(self) -> Tuple[slice, slice]:
        return slice(self.row_off, self.row_end), slice(self.col_off, self.col_end)


def nodata_mask(values: np.ndarray, nodata: float) -> np.ndarray:
    """Boolean array marking pixels equal to the sentinel."""
    if math.isnan(nodata):
        return np.isnan(values)
    return values == np.float32(nodata)


@dataclass(frozen=True, eq=False)
class RasterTile:
    """Immutable single-band height grid."""

    values: np.ndarray
    transform: GeoTransform
    nodata: float = DEFAULT_NODATA

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float32, order="C", copy=True)
        if arr.ndim != 2:
            raise ValueError(f"tile values must be 2-D, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "nodata", float(self.nodata))

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    @property
    def pixel_size(self) -> float:
        return self.transform.pixel_size_x

    def nodata_mask(self) -> np.ndarray:
        return nodata_mask(self.values, self.nodata)

    def valid_mask(self) -> np.ndarray:
        """Pixels that are finite and not the sentinel."""
        return np.isfinite(self.values) & ~self.nodata_mask()

    def window(self, win: Window) -> "RasterTile":
        if not win.fits(self.rows, self.cols):
            raise ValueError(f"{win} exceeds tile of shape {self.shape}")
        rs, cs = win.slices()
        return RasterTile(self.values[rs, cs], self.transform.shifted(win.col_off, win.row_off), self.nodata)

    def with_values(self, values: np.ndarray) -> "RasterTile":
        return RasterTile(values, self.transform, self.nodata)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RasterTile):
            return NotImplemented
        same_nodata = (self.nodata == other.nodata) or (
            math.isnan(self.nodata) and math.isnan(other.nodata)
        )
        return (
            self.transform == other.transform
            and same_nodata
            and self.values.shape == other.values.shape
            and np.array_equal(self.values.view(np.uint32), other.values.view(np.uint32))
        )

    __hash__ = None


def check_heights(values: np.ndarray, nodata: float, height_range=DEFAULT_HEIGHT_RANGE) -> None:
    lo, hi = height_range
    finite = np.isfinite(values) & ~nodata_mask(values, nodata)
    bad = finite & ((values < lo) | (values > hi))
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise HeightOutOfRange(
            f"{int(bad.sum())} pixel(s) outside [{lo}, {hi}] m, first at row={r} col={c}: {values[r, c]}"
        )


def read_tile(
    path,
    band: int = 1,
    window: Optional[Window] = None,
    default_nodata: float = DEFAULT_NODATA,
    height_range: Optional[Tuple[float, float]] = DEFAULT_HEIGHT_RANGE,
) -> RasterTile:
    """Read one band of a GeoTIFF into a :class:`RasterTile`.

    ``band`` is 1-based, following GDAL. If the file carries no nodata tag,
    ``default_nodata`` is used. Pass ``height_range=None`` to skip the
    plausibility check on finite heights.
    """
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    try:
        src = rasterio.open(path)
    except RasterioIOError as exc:
        raise MalformedRaster(f"{path}: {exc}") from exc
    with src:
        if band < 1 or band > src.count:
            raise BandOutOfRange(f"{path}: band {band} requested, file has {src.count}")
        nodata = src.nodatavals[band - 1]
        if nodata is None:
            nodata = default_nodata
        tags = src.tags()
        crs_id = tags.get(_CRS_TAG) or (src.crs.to_string() if src.crs else "")
        try:
            base = GeoTransform.from_affine(src.transform, crs_id)
        except ValueError as exc:
            raise MalformedRaster(f"{path}: {exc}") from exc
        if window is None:
            data = src.read(band)
            transform = base
        else:
            if not window.fits(src.height, src.width):
                raise ValueError(f"{window} exceeds raster of shape {(src.height, src.width)}")
            data = src.read(band, window=RioWindow(window.col_off, window.row_off, window.cols, window.rows))
            transform = base.shifted(window.col_off, window.row_off)
    data = data.astype(np.float32, copy=False)
    if height_range is not None:
        check_heights(data, nodata, height_range)
    return RasterTile(data, transform, nodata)


def raster_shape(path) -> Tuple[int, int]:
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    try:
        with rasterio.open(path) as src:
            return src.height, src.width
    except RasterioIOError as exc:
        raise MalformedRaster(f"{path}: {exc}") from exc


def _crs_or_none(crs_id: str):
    if not crs_id:
        return None
    try:
        return CRS.from_user_input(crs_id)
    except CRSError:
        return None


def geotiff_profile(rows: int, cols: int, transform: GeoTransform, nodata: float, cog: bool = False) -> dict:
    profile = dict(
        driver="GTiff",
        height=rows,
        width=cols,
        count=1,
        dtype="float32",
        nodata=nodata,
        transform=transform.to_affine(),
        crs=_crs_or_none(transform.crs_id),
    )
    if cog:
        profile.update(driver="COG", compress="deflate")
    return profile


def write_tile(tile: RasterTile, path, cog: bool = False) -> None:
    """Write ``tile`` as a single-band float32 GeoTIFF that reads back bit-identical."""
    if tile.rows == 0 or tile.cols == 0:
        raise RejectedEmptyRaster(f"refusing to write empty raster of shape {tile.shape}")
    path = Path(path)
    if not path.parent.is_dir():
        raise IoFailure(f"parent directory does not exist: {path.parent}")
    profile = geotiff_profile(tile.rows, tile.cols, tile.transform, tile.nodata, cog=cog)
    try:
        with rasterio.open(path, "w", **profile) as dst:
            dst.write(tile.values, 1)
            if tile.transform.crs_id:
                dst.update_tags(**{_CRS_TAG: tile.transform.crs_id})
    except (RasterioIOError, OSError) as exc:
        raise IoFailure(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class AlignmentReport:
    aligned: bool
    reasons: Tuple[str, ...] = ()
    origin_offset: Tuple[float, float] = (0.0, 0.0)

    @property
    def reason(self) -> Optional[str]:
        return self.reasons[0] if self.reasons else None

    def __bool__(self) -> bool:
        return self.aligned


def check_alignment(a: RasterTile, b: RasterTile, tol: float = 1e-6) -> AlignmentReport:
    """Compare grids: origins within ``tol`` map units, identical resolution and shape."""
    ta, tb = a.transform, b.transform
    dx, dy = abs(ta.origin_x - tb.origin_x), abs(ta.origin_y - tb.origin_y)
    reasons = []
    if dx >= tol or dy >= tol:
        reasons.append("origin_mismatch")
    if ta.pixel_size_x != tb.pixel_size_x or ta.pixel_size_y != tb.pixel_size_y:
        reasons.append("resolution_mismatch")
    if a.shape != b.shape:
        reasons.append("shape_mismatch")
    return AlignmentReport(not reasons, tuple(reasons), (dx, dy))


def make_tile(values, pixel_size: float = 0.5, origin=(0.0, 0.0), nodata: float = DEFAULT_NODATA, crs_id: str = "") -> RasterTile:
    """Convenience constructor for synthetic tiles."""
    return RasterTile(np.asarray(values, dtype=np.float32), GeoTransform(origin[0], origin[1], pixel_size, pixel_size, crs_id), nodata)


def env_cache_dir() -> Optional[str]:
    return os.environ.get("CHMEVAL_CACHE_DIR") or None
