"""
Overlapping-window inference over regions larger than a model's context window.

Windows are visited in row bands. Each provider output is multiplied by a
taper and added into a rolling buffer of weighted sums and weight sums that
spans at most one window of rows. Once the next band starts at row ``r``, no
pending window can touch rows above ``r``, so those rows are normalized and
written to the sink and their buffer space is reused. Memory therefore scales
with ``window * region_cols`` rather than with the region height.
"""

from __future__ import annotations

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional, Tuple

import numpy as np
import rasterio
from rasterio.windows import Window as RioWindow

from .errors import BadStride, ProviderFailure, SinkFailure, StitchError
from .raster import GeoTransform, Window, geotiff_profile

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = 1536

InferenceProvider = Callable[[np.ndarray], np.ndarray]


class Taper(str, Enum):
    UNIFORM = "uniform"
    COSINE = "cosine"


def axis_offsets(n: int, window: int, stride: int) -> List[int]:
    """Window starts along one axis: multiples of ``stride``, last one flush with the edge."""
    if n <= window:
        return [0]
    offsets = []
    off = 0
    while off + window < n:
        offsets.append(off)
        off += stride
    offsets.append(n - window)
    return sorted(set(offsets))


@dataclass(frozen=True)
class StitchPlan:
    region_rows: int
    region_cols: int
    window: int
    stride: int
    taper: Taper
    row_offsets: Tuple[int, ...]
    col_offsets: Tuple[int, ...]

    @property
    def win_rows(self) -> int:
        return min(self.window, self.region_rows)

    @property
    def win_cols(self) -> int:
        return min(self.window, self.region_cols)

    @property
    def windows(self) -> List[Window]:
        return [
            Window(r, c, self.win_rows, self.win_cols, partial=self.win_rows < self.window or self.win_cols < self.window)
            for r in self.row_offsets
            for c in self.col_offsets
        ]

    @property
    def n_windows(self) -> int:
        return len(self.row_offsets) * len(self.col_offsets)


def plan_windows(region_rows: int, region_cols: int, window: int = DEFAULT_WINDOW, stride: Optional[int] = None, taper="cosine") -> StitchPlan:
    """Schedule square windows covering a ``region_rows x region_cols`` region.

    ``stride`` defaults to half the window. Regions smaller than the window
    on an axis get a single window clamped to the region there; the provider
    still sees a full ``window``-sized grid (mirror-padded).
    """
    if window < 1:
        raise BadStride(f"window must be >= 1, got {window}")
    if stride is None:
        stride = max(window // 2, 1)
    if not 1 <= stride <= window:
        raise BadStride(f"stride must be in [1, window={window}], got {stride}")
    if region_rows < 1 or region_cols < 1:
        raise StitchError(f"empty region {region_rows}x{region_cols}")
    return StitchPlan(
        region_rows,
        region_cols,
        window,
        stride,
        Taper(taper),
        tuple(axis_offsets(region_rows, window, stride)),
        tuple(axis_offsets(region_cols, window, stride)),
    )


def _taper_1d(window: int, taper: Taper) -> np.ndarray:
    if taper is Taper.UNIFORM:
        return np.ones(window)
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * (np.arange(window) + 0.5) / window)
    # symmetrize exactly; float cos is not mirror-exact
    return 0.5 * (w + w[::-1])


def blend_weights(window: int, taper="cosine") -> np.ndarray:
    """``window x window`` overlap weights; cosine is a separable raised cosine, > 0 everywhere."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    w = _taper_1d(window, Taper(taper))
    return np.outer(w, w)


# ---------------------------------------------------------------------------
# sources and sinks
# ---------------------------------------------------------------------------


class ArraySource:
    def __init__(self, array: np.ndarray):
        self.array = np.asarray(array)
        if self.array.ndim != 2:
            raise ValueError("source array must be 2-D")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.array.shape

    def read(self, win: Window) -> np.ndarray:
        rs, cs = win.slices()
        return self.array[rs, cs]


class ArraySink:
    def __init__(self, rows: int, cols: int, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.array = np.zeros((rows, cols), dtype=self.dtype)
        self.valid: Optional[bool] = None
        self.next_row = 0

    def write_rows(self, row_off: int, block: np.ndarray) -> None:
        if row_off != self.next_row:
            raise SinkFailure(f"rows must arrive in order: expected {self.next_row}, got {row_off}")
        self.array[row_off: row_off + block.shape[0]] = block
        self.next_row = row_off + block.shape[0]

    def close(self, valid: bool = True) -> None:
        self.valid = valid


class GeoTiffSource:
    """Windowed reader over band 1 of a GeoTIFF; reads are serialized (GDAL handles are not thread-safe)."""

    def __init__(self, path):
        self._ds = rasterio.open(path)
        self._lock = threading.Lock()
        self.transform = GeoTransform.from_affine(self._ds.transform, self._ds.crs.to_string() if self._ds.crs else "")
        self.nodata = self._ds.nodata

    @property
    def shape(self) -> Tuple[int, int]:
        return self._ds.height, self._ds.width

    def read(self, win: Window) -> np.ndarray:
        with self._lock:
            return self._ds.read(1, window=RioWindow(win.col_off, win.row_off, win.cols, win.rows))

    def close(self):
        self._ds.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class GeoTiffSink:
    """Streams finished rows into a float32 GeoTIFF; an aborted run is tagged ``STITCH_VALID=false``."""

    def __init__(self, path, rows: int, cols: int, transform=None, nodata: Optional[float] = None):
        transform = transform or GeoTransform(0.0, float(rows), 1.0, 1.0)
        profile = geotiff_profile(rows, cols, transform, nodata)
        if rows >= 256 and cols >= 256:
            profile.update(tiled=True, blockxsize=256, blockysize=256)
        try:
            self._ds = rasterio.open(path, "w", **profile)
        except Exception as exc:
            raise SinkFailure(f"{path}: {exc}") from exc
        self.path = path

    def write_rows(self, row_off: int, block: np.ndarray) -> None:
        self._ds.write(block.astype(np.float32, copy=False), 1, window=RioWindow(0, row_off, block.shape[1], block.shape[0]))

    def close(self, valid: bool = True) -> None:
        self._ds.update_tags(STITCH_VALID="true" if valid else "false")
        self._ds.close()


# ---------------------------------------------------------------------------
# the run
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StitchReport:
    region_rows: int
    region_cols: int
    window: int
    stride: int
    taper: str
    n_windows: int
    provider_calls: int
    peak_buffered_rows: int
    rows_emitted: int
    valid: bool = True

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def pad_to_window(grid: np.ndarray, window: int) -> np.ndarray:
    """Mirror-pad at the bottom/right up to ``window x window``."""
    pr, pc = window - grid.shape[0], window - grid.shape[1]
    if pr == 0 and pc == 0:
        return grid
    return np.pad(grid, ((0, pr), (0, pc)), mode="symmetric")


def _invoke(provider, grid: np.ndarray, win: Window) -> np.ndarray:
    infer = getattr(provider, "infer", None)
    out = infer(grid, win) if infer is not None else provider(grid)
    return np.asarray(out)


def stitch_run(source, plan: StitchPlan, provider, sink, jobs: int = 1) -> StitchReport:
    """Run ``provider`` over every planned window and blend into ``sink`` row by row.

    Each output pixel is ``sum(w * out) / sum(w)`` over the windows covering
    it. Windows that share a row band may run concurrently when ``jobs > 1``;
    accumulation order is fixed by column offset, so results are identical for
    any ``jobs``.
    """
    rows, cols = source.shape
    if (rows, cols) != (plan.region_rows, plan.region_cols):
        raise StitchError(f"source shape {(rows, cols)} does not match plan {(plan.region_rows, plan.region_cols)}")
    weights = blend_weights(plan.window, plan.taper)[: plan.win_rows, : plan.win_cols]
    cap = plan.win_rows
    acc = np.zeros((cap, cols), dtype=np.float64)
    wsum = np.zeros((cap, cols), dtype=np.float64)
    base = 0  # region row stored in buffer row 0
    filled = 0  # one past the last region row any window has touched
    peak = 0
    calls = 0
    pool = ThreadPoolExecutor(max_workers=jobs) if jobs > 1 else None
    out_dtype = getattr(sink, "dtype", np.float32)

    def emit(n: int) -> None:
        if np.any(wsum[:n] <= 0):
            raise StitchError("uncovered pixels in finalized rows")
        block = (acc[:n] / wsum[:n]).astype(out_dtype)
        try:
            sink.write_rows(base, block)
        except SinkFailure:
            raise
        except Exception as exc:
            raise SinkFailure(str(exc)) from exc

    def run_window(win: Window) -> np.ndarray:
        grid = pad_to_window(source.read(win), plan.window)
        out = _invoke(provider, grid, win)
        if out.shape != grid.shape:
            raise ProviderFailure(f"provider returned shape {out.shape} for input {grid.shape}")
        return out[: win.rows, : win.cols]

    try:
        for r in plan.row_offsets:
            if r > base:
                done = r - base
                emit(done)
                keep = max(filled - r, 0)
                acc[:keep] = acc[done: done + keep]
                wsum[:keep] = wsum[done: done + keep]
                acc[keep:] = 0.0
                wsum[keep:] = 0.0
                base = r
            band = [Window(r, c, plan.win_rows, plan.win_cols) for c in plan.col_offsets]
            try:
                outputs = list(pool.map(run_window, band)) if pool else [run_window(w) for w in band]
            except (ProviderFailure, SinkFailure):
                raise
            except Exception as exc:
                raise ProviderFailure(f"provider failed in row band {r}: {exc}") from exc
            calls += len(band)
            for win, out in zip(band, outputs):
                rs = slice(win.row_off - base, win.row_off - base + win.rows)
                cs = slice(win.col_off, win.col_end)
                acc[rs, cs] += weights * out
                wsum[rs, cs] += weights
            filled = max(filled, r + plan.win_rows)
            peak = max(peak, filled - base)
        emit(filled - base)
    except (ProviderFailure, SinkFailure, StitchError):
        try:
            sink.close(valid=False)
        except Exception:
            logger.exception("sink close failed after aborted stitch")
        raise
    finally:
        if pool:
            pool.shutdown()
    sink.close(valid=True)
    return StitchReport(
        rows, cols, plan.window, plan.stride, plan.taper.value,
        plan.n_windows, calls, peak, filled, True,
    )


def stitch_array(array: np.ndarray, provider, window: int = DEFAULT_WINDOW, stride: Optional[int] = None, taper="cosine", jobs: int = 1, dtype=np.float32):
    """In-memory convenience wrapper returning ``(output, report)``.

    ``dtype=np.float64`` keeps the blended values unrounded.
    """
    array = np.asarray(array)
    plan = plan_windows(array.shape[0], array.shape[1], window, stride, taper)
    sink = ArraySink(*array.shape, dtype=dtype)
    report = stitch_run(ArraySource(array), plan, provider, sink, jobs=jobs)
    return sink.array, report
