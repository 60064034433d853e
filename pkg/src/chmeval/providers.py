"""
Inference providers for the stitcher.

A provider maps a ``window x window`` grid to a grid of the same shape. Any
callable works in-process. :class:`SubprocessProvider` runs an external
command per window using a file protocol:

* request: ``<tmp>/request.tif`` (float32 GeoTIFF of the padded window) and
  ``<tmp>/request.json`` with ``row_off``, ``col_off``, ``rows``, ``cols``
  (unpadded extent in the region) and ``window`` (padded side length);
* response: the command writes ``<tmp>/response.tif`` with the same shape.

The command line may contain ``{input}``, ``{output}`` and ``{meta}``
placeholders; if none are present the three paths are appended in that order.
``python -m chmeval.providers <spec> IN OUT META`` serves the built-in
providers over that protocol, which is handy for testing.
"""

from __future__ import annotations

import json
import subprocess
import sys
import tempfile
import warnings
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from rasterio.errors import NotGeoreferencedWarning
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ProviderFailure
from .raster import GeoTransform, RasterTile, Window, env_cache_dir, read_tile, write_tile


def identity(grid: np.ndarray) -> np.ndarray:
    return grid


def shift(offset: float) -> Callable[[np.ndarray], np.ndarray]:
    def provider(grid: np.ndarray) -> np.ndarray:
        return (grid + np.float32(offset)).astype(np.float32)

    return provider


def mean_filter(size: int = 3) -> Callable[[np.ndarray], np.ndarray]:
    """Box mean over ``size x size`` neighbourhoods, edge-replicated inside the window."""
    if size < 1 or size % 2 == 0:
        raise ValueError("mean filter size must be a positive odd integer")
    h = size // 2

    def provider(grid: np.ndarray) -> np.ndarray:
        padded = np.pad(np.asarray(grid, dtype=np.float64), h, mode="edge")
        return sliding_window_view(padded, (size, size)).mean(axis=(-2, -1)).astype(np.float32)

    return provider


def from_spec(spec: str):
    """Build a provider from ``identity``, ``shift:<c>``, ``mean:<k>`` or ``cmd:<command line>``."""
    name, _, arg = spec.partition(":")
    if name == "identity":
        return identity
    if name == "shift":
        return shift(float(arg or 0.0))
    if name == "mean":
        return mean_filter(int(arg or 3))
    if name == "cmd":
        import shlex

        return SubprocessProvider(shlex.split(arg))
    raise ValueError(f"unknown provider spec {spec!r}")


class SubprocessProvider:
    """Runs one external process per window, exchanging GeoTIFFs through a temp directory."""

    def __init__(self, command: Sequence[str], transform: Optional[GeoTransform] = None, workdir=None, timeout: Optional[float] = None):
        self.command = list(command)
        self.transform = transform
        self.workdir = workdir or env_cache_dir()
        self.timeout = timeout

    def _argv(self, inp: Path, out: Path, meta: Path):
        subs = {"input": str(inp), "output": str(out), "meta": str(meta)}
        if any("{" + k + "}" in a for a in self.command for k in subs):
            return [a.format(**subs) for a in self.command]
        return self.command + [subs["input"], subs["output"], subs["meta"]]

    def infer(self, grid: np.ndarray, win: Window) -> np.ndarray:
        base = self.transform or GeoTransform(0.0, 0.0, 1.0, 1.0)
        request = RasterTile(grid, base.shifted(win.col_off, win.row_off), nodata=float("nan"))
        with tempfile.TemporaryDirectory(dir=self.workdir) as tmp:
            tmp = Path(tmp)
            inp, out, meta = tmp / "request.tif", tmp / "response.tif", tmp / "request.json"
            with warnings.catch_warnings():
                # the unit-pixel default grid is intentionally ungeoreferenced
                warnings.simplefilter("ignore", NotGeoreferencedWarning)
                write_tile(request, inp)
            meta.write_text(json.dumps({
                "row_off": win.row_off, "col_off": win.col_off,
                "rows": win.rows, "cols": win.cols, "window": int(grid.shape[0]),
            }))
            proc = subprocess.run(self._argv(inp, out, meta), capture_output=True, text=True, timeout=self.timeout)
            if proc.returncode != 0:
                raise ProviderFailure(f"provider exited {proc.returncode}: {proc.stderr.strip()[-500:]}")
            if not out.exists():
                raise ProviderFailure("provider wrote no response raster")
            return read_tile(out, height_range=None).values

    def __call__(self, grid: np.ndarray) -> np.ndarray:
        return self.infer(grid, Window(0, 0, grid.shape[0], grid.shape[1]))


def serve(provider: Callable[[np.ndarray], np.ndarray], input_path, output_path) -> None:
    """Worker side of the file protocol: read a request raster, write the response."""
    tile = read_tile(input_path, height_range=None)
    out = np.asarray(provider(np.array(tile.values)), dtype=np.float32)
    if out.shape != tile.shape:
        raise ProviderFailure(f"provider changed shape {tile.shape} -> {out.shape}")
    write_tile(tile.with_values(out), output_path)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 4:
        print("usage: python -m chmeval.providers <identity|shift:C|mean:K> IN OUT META", file=sys.stderr)
        return 2
    spec, inp, out, _meta = argv
    serve(from_spec(spec), inp, out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
