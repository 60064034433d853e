"""
Tile manifests and rolling per-tile metrics up into grouped summaries.

Manifest formats
----------------
CSV, one row per tile::

    tile_id,truth_path,lidar_year,naip_year,split,ecoregions,pred:<model>,...

``ecoregions`` holds ``code:fraction`` pairs separated by ``;``, e.g.
``6.2.7:0.7;6.2.8:0.3``. Each ``pred:<model>`` column is the prediction path
for that model.

JSON lines, one object per tile, with the same fields except that
predictions go in ``pred_paths`` ({model: path}) and fractions in
``ecoregion_fractions`` ({code: fraction}).

Relative paths resolve against the manifest's directory.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import EmptyFractions, InvalidRecord, MisalignedPair, NoValidTiles
from .masking import ValidMask
from .metrics import TileMetrics
from .raster import RasterTile

YEAR_RANGE = (2014, 2022)
SPLITS = ("train", "test")
PRED_PREFIX = "pred:"


@dataclass(frozen=True, eq=False)
class SampleRecord:
    tile_id: str
    truth_path: str
    pred_paths: Mapping[str, str]
    lidar_year: int
    naip_year: int
    ecoregion_fractions: Mapping[str, float]
    split: str = "test"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise InvalidRecord(f"{self.tile_id}: split must be one of {SPLITS}, got {self.split!r}")
        lo, hi = YEAR_RANGE
        for name in ("lidar_year", "naip_year"):
            year = getattr(self, name)
            if not lo <= year <= hi:
                raise InvalidRecord(f"{self.tile_id}: {name}={year} outside [{lo}, {hi}]")
        if self.ecoregion_fractions:
            if any(not 0.0 <= f <= 1.0 for f in self.ecoregion_fractions.values()):
                raise InvalidRecord(f"{self.tile_id}: ecoregion fractions must lie in [0, 1]")
            total = math.fsum(self.ecoregion_fractions.values())
            if abs(total - 1.0) > 1e-6:
                raise InvalidRecord(f"{self.tile_id}: ecoregion fractions sum to {total}, not 1")

    def __eq__(self, other):
        if not isinstance(other, SampleRecord):
            return NotImplemented
        return self.to_json() == other.to_json()

    def __hash__(self):
        return hash(self.tile_id)

    def with_split(self, split: str) -> "SampleRecord":
        return SampleRecord(
            self.tile_id, self.truth_path, dict(self.pred_paths), self.lidar_year,
            self.naip_year, dict(self.ecoregion_fractions), split,
        )

    def to_json(self) -> dict:
        return {
            "tile_id": self.tile_id,
            "truth_path": self.truth_path,
            "pred_paths": dict(self.pred_paths),
            "lidar_year": self.lidar_year,
            "naip_year": self.naip_year,
            "ecoregion_fractions": dict(self.ecoregion_fractions),
            "split": self.split,
        }


def _resolve(base: Path, p: str) -> str:
    path = Path(p)
    return str(path if path.is_absolute() else base / path)


def _parse_fractions(text: str, tile_id: str) -> Dict[str, float]:
    out: Dict[str, float] = {}
    for part in filter(None, (t.strip() for t in text.split(";"))):
        code, sep, frac = part.rpartition(":")
        if not sep or not code:
            raise InvalidRecord(f"{tile_id}: bad ecoregion entry {part!r}")
        out[code] = float(frac)
    return out


def _record_from_mapping(row: Mapping, base: Path, line: int) -> SampleRecord:
    try:
        tile_id = str(row["tile_id"])
        if "pred_paths" in row:
            preds = {str(k): str(v) for k, v in row["pred_paths"].items()}
            fractions = {str(k): float(v) for k, v in (row.get("ecoregion_fractions") or {}).items()}
        else:
            preds = {k[len(PRED_PREFIX):]: v for k, v in row.items() if k.startswith(PRED_PREFIX) and v}
            fractions = _parse_fractions(row.get("ecoregions") or "", tile_id)
        return SampleRecord(
            tile_id=tile_id,
            truth_path=_resolve(base, str(row["truth_path"])),
            pred_paths={m: _resolve(base, p) for m, p in preds.items()},
            lidar_year=int(row["lidar_year"]),
            naip_year=int(row["naip_year"]),
            ecoregion_fractions=fractions,
            split=str(row.get("split") or "test"),
        )
    except KeyError as exc:
        raise InvalidRecord(f"manifest line {line}: missing field {exc}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InvalidRecord):
            raise
        raise InvalidRecord(f"manifest line {line}: {exc}") from exc


def load_manifest(path) -> List[SampleRecord]:
    """Read a CSV or JSON-lines manifest (chosen by suffix: ``.jsonl``/``.json`` or CSV)."""
    path = Path(path)
    base = path.parent
    records = []
    with open(path, newline="") as fh:
        if path.suffix in (".jsonl", ".json"):
            for i, line in enumerate(fh, 1):
                if line.strip():
                    records.append(_record_from_mapping(json.loads(line), base, i))
        else:
            for i, row in enumerate(csv.DictReader(fh), 2):
                records.append(_record_from_mapping(row, base, i))
    seen = set()
    for r in records:
        if r.tile_id in seen:
            raise InvalidRecord(f"duplicate tile_id {r.tile_id!r}")
        seen.add(r.tile_id)
    return records


def write_manifest(records: Sequence[SampleRecord], path, relative_to: Optional[Path] = None) -> None:
    """Write records as CSV (or JSON lines for a ``.jsonl`` path)."""
    path = Path(path)
    base = Path(relative_to) if relative_to is not None else path.parent

    def rel(p: str) -> str:
        try:
            return str(Path(p).resolve().relative_to(base.resolve()))
        except ValueError:
            return p

    if path.suffix in (".jsonl", ".json"):
        with open(path, "w") as fh:
            for r in records:
                d = r.to_json()
                d["truth_path"] = rel(d["truth_path"])
                d["pred_paths"] = {m: rel(p) for m, p in d["pred_paths"].items()}
                fh.write(json.dumps(d, sort_keys=True) + "\n")
        return
    models: List[str] = []
    for r in records:
        models.extend(m for m in r.pred_paths if m not in models)
    header = ["tile_id", "truth_path", "lidar_year", "naip_year", "split", "ecoregions"]
    header += [PRED_PREFIX + m for m in models]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in records:
            eco = ";".join(f"{k}:{float(v)!r}" for k, v in r.ecoregion_fractions.items())
            w.writerow(
                [r.tile_id, rel(r.truth_path), r.lidar_year, r.naip_year, r.split, eco]
                + [rel(r.pred_paths[m]) if m in r.pred_paths else "" for m in models]
            )


def assign_ecoregion(rec: SampleRecord) -> str:
    """Ecoregion covering the largest share of the tile; ties go to the smallest code."""
    if not rec.ecoregion_fractions:
        raise EmptyFractions(f"{rec.tile_id}: no ecoregion fractions")
    return min(rec.ecoregion_fractions.items(), key=lambda kv: (-kv[1], kv[0]))[0]


def temporal_filter(records: Iterable[SampleRecord], max_gap: int = 1) -> List[SampleRecord]:
    """Keep tiles whose imagery year is within ``max_gap`` years of the lidar year."""
    return [r for r in records if abs(r.naip_year - r.lidar_year) <= max_gap]


def split_records(records: Sequence[SampleRecord], test_fraction: float = 0.15, seed: int = 0):
    """Seeded random train/test partition; each side keeps the input order."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    records = list(records)
    n = len(records)
    n_test = int(math.floor(n * test_fraction + 0.5))
    order = np.random.default_rng(seed).permutation(n)
    test_idx = set(order[:n_test].tolist())
    train = [r for i, r in enumerate(records) if i not in test_idx]
    test = [r for i, r in enumerate(records) if i in test_idx]
    return train, test


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SummaryStats:
    """Box-plot numbers. Quartiles use linear interpolation between order statistics."""

    median: float
    q1: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    n_tiles: int


def summarize(values: Sequence[float]) -> SummaryStats:
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise NoValidTiles("no values to summarize")
    q1, median, q3 = np.quantile(v, [0.25, 0.5, 0.75])
    iqr = q3 - q1
    inside = v[(v >= q1 - 1.5 * iqr) & (v <= q3 + 1.5 * iqr)]
    return SummaryStats(float(median), float(q1), float(q3), float(inside[0]), float(inside[-1]), int(v.size))


@dataclass(frozen=True)
class TileResult:
    """One evaluated (tile, model, resolution) with the fields needed for grouping."""

    tile_id: str
    model: str
    resolution: float
    ecoregion: str
    lidar_year: int
    metrics: TileMetrics

    @classmethod
    def from_record(cls, rec: SampleRecord, model: str, resolution: float, metrics: TileMetrics) -> "TileResult":
        eco = assign_ecoregion(rec) if rec.ecoregion_fractions else ""
        return cls(rec.tile_id, model, float(resolution), eco, rec.lidar_year, metrics)

    def key(self, name: str):
        if name == "overall":
            return "all"
        if name in ("ecoregion", "lidar_year", "model", "resolution"):
            return getattr(self, name)
        raise ValueError(f"unknown grouping key {name!r}")


GROUP_KEYS = ("ecoregion", "lidar_year", "model", "resolution")


def group_summary(results: Iterable, key: str, field: str = "mae") -> Dict[object, SummaryStats]:
    """Summary statistics of ``field`` per group, skipping empty tiles and undefined values.

    ``results`` holds :class:`TileResult` objects, or ``(SampleRecord, TileMetrics)`` pairs
    for the record-level keys ``ecoregion`` and ``lidar_year``.
    """
    groups: Dict[object, List[float]] = {}
    for item in results:
        if isinstance(item, tuple):
            rec, m = item
            if key == "ecoregion":
                k = assign_ecoregion(rec)
            elif key == "lidar_year":
                k = rec.lidar_year
            else:
                raise ValueError(f"key {key!r} needs TileResult input")
        else:
            k, m = item.key(key), item.metrics
        if m.empty:
            continue
        v = m.get(field)
        if v is None:
            continue
        groups.setdefault(k, []).append(v)
    if not groups:
        raise NoValidTiles(f"no non-empty tiles with a defined {field}")
    return {k: summarize(groups[k]) for k in sorted(groups)}


@dataclass(frozen=True)
class HeightBinSpec:
    """Ascending edges; bin ``k`` is ``[edges[k], edges[k+1])`` and the last bin is open-ended."""

    edges: Tuple[float, ...]

    def __post_init__(self):
        edges = tuple(float(e) for e in self.edges)
        if len(edges) < 1 or any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError(f"height bin edges must be strictly ascending, got {edges}")
        object.__setattr__(self, "edges", edges)

    @property
    def bounds(self) -> List[Tuple[float, float]]:
        e = list(self.edges) + [math.inf]
        return list(zip(e[:-1], e[1:]))


@dataclass(frozen=True)
class BinMetrics:
    lo: float
    hi: float
    n: int
    me: float
    mae: float

    @property
    def empty(self) -> bool:
        return self.n == 0


def height_bin_metrics(truth: RasterTile, pred: RasterTile, mask: ValidMask, bins: HeightBinSpec) -> List[BinMetrics]:
    """ME and MAE per truth-height bin. Valid pixels below the first edge fall in no bin."""
    if truth.shape != pred.shape or truth.shape != mask.bits.shape:
        raise MisalignedPair(f"shapes differ: truth {truth.shape}, pred {pred.shape}, mask {mask.bits.shape}")
    y = truth.values[mask.bits].astype(np.float64)
    d = pred.values[mask.bits].astype(np.float64) - y
    edges = np.asarray(bins.edges)
    idx = np.searchsorted(edges, y, side="right") - 1
    nb = edges.size
    keep = idx >= 0
    idx, d = idx[keep], d[keep]
    counts = np.bincount(idx, minlength=nb)
    sums = np.bincount(idx, weights=d, minlength=nb)
    abs_sums = np.bincount(idx, weights=np.abs(d), minlength=nb)
    out = []
    for k, (lo, hi) in enumerate(bins.bounds):
        n = int(counts[k])
        if n:
            out.append(BinMetrics(lo, hi, n, float(sums[k] / n), float(abs_sums[k] / n)))
        else:
            out.append(BinMetrics(lo, hi, 0, math.nan, math.nan))
    return out


def bin_summary(per_tile: Iterable[Sequence[BinMetrics]], field: str = "me") -> List[Optional[SummaryStats]]:
    """Median-across-tiles summary for each height bin; ``None`` for bins never populated."""
    columns: List[List[float]] = []
    for bins in per_tile:
        if not columns:
            columns = [[] for _ in bins]
        for k, b in enumerate(bins):
            if not b.empty:
                columns[k].append(getattr(b, field))
    return [summarize(c) if c else None for c in columns]
