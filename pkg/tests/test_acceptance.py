"""
Acceptance checks. Each test carries a ``criterion`` mark; the terminal
summary prints one PASS/FAIL line per criterion.
"""

import csv
import math
import time

import numpy as np
import pytest

from chmeval.aggregate import HeightBinSpec, SampleRecord, group_summary, height_bin_metrics
from chmeval.cli import METRICS_COLUMNS, cmd_report, main
from chmeval.config import EvalConfig
from chmeval.errors import MetricError
from chmeval.masking import PixelPairs, build_mask, extract_pairs
from chmeval.metrics import (
    BlockSpec,
    TileMetrics,
    block_r2,
    edge_error,
    evaluate_tile,
    mae,
    mape,
    mean_error,
    r2,
    rmse,
)
from chmeval.providers import identity, mean_filter
from chmeval.resample import resample
from chmeval.stitch import ArraySink, ArraySource, plan_windows, stitch_array, stitch_run
from chmeval.synthetic import make_corpus

from conftest import random_pair, tile
import oracles as o

C1 = pytest.mark.criterion(1, "metric-oracle equivalence (200 random pairs, 1e-9, <30 s)")
C2 = pytest.mark.criterion(2, "hand-computed spot checks and ME sign convention")
C3 = pytest.mark.criterion(3, "masking: empty tiles excluded, min_height monotone")
C4 = pytest.mark.criterion(4, "block-average mean conservation and factor composition")
C5 = pytest.mark.criterion(5, "stitcher seamlessness, oracle agreement, memory bound, <2 min")
C6 = pytest.mark.criterion(6, "aggregation vs sort oracle; height-bin ME recomposition")
C7 = pytest.mark.criterion(7, "reference summary table reproduced byte-exactly by report")
C8 = pytest.mark.criterion(8, "evaluate + report byte-identical across seeded runs")

ATOL = 1e-9


def _or_none(fn, *args):
    try:
        return fn(*args)
    except (MetricError, ZeroDivisionError):
        return None


# ---------------------------------------------------------------------------
# 1
# ---------------------------------------------------------------------------


@C1
def test_metrics_match_loop_oracles():
    rng = np.random.default_rng(1)
    edges = [2.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 50.0]
    bins = HeightBinSpec(edges)
    t0 = time.perf_counter()
    checked = 0
    for i in range(200):
        truth, pred = random_pair(rng, max_side=64)
        bp = int(rng.choice([4, 8, 16, 40]))
        mask = build_mask(truth, pred, 2.0)
        pairs = extract_pairs(truth, pred, mask)
        T, P, M = o.to_lists(truth.values), o.to_lists(pred.values), mask.bits.tolist()
        y, yh = o.pairs_loop(T, P, M)
        if not y:
            continue
        checked += 1
        got = {
            "mae": mae(pairs), "rmse": rmse(pairs), "me": mean_error(pairs), "mape": mape(pairs),
            "r2": _or_none(r2, pairs),
            "block_r2": _or_none(block_r2, truth, pred, mask, BlockSpec(bp)),
            "edge_error": edge_error(truth, pred, mask),
        }
        want = {
            "mae": o.mae_loop(y, yh), "rmse": o.rmse_loop(y, yh), "me": o.me_loop(y, yh), "mape": o.mape_loop(y, yh),
            "r2": _or_none(o.r2_loop, y, yh) if len(y) >= 2 else None,
            "block_r2": _or_none(o.block_r2_loop, T, P, M, bp),
            "edge_error": o.edge_error_loop(T, P, M),
        }
        for k in got:
            if want[k] is None:
                assert got[k] is None, (i, k)
            else:
                assert abs(got[k] - want[k]) <= ATOL, (i, k, got[k], want[k])
        for b, (n, me, ae) in zip(height_bin_metrics(truth, pred, mask, bins), o.height_bins_loop(y, yh, edges)):
            assert b.n == n
            if n:
                assert abs(b.me - me) <= ATOL and abs(b.mae - ae) <= ATOL
    elapsed = time.perf_counter() - t0
    print(f"criterion 1: {checked} non-empty pairs checked in {elapsed:.1f} s")
    assert checked >= 190
    assert elapsed < 30.0


# ---------------------------------------------------------------------------
# 2
# ---------------------------------------------------------------------------


def P(y, yh):
    return PixelPairs(np.array(y, float), np.array(yh, float))


@C2
def test_hand_computed_values():
    assert mae(P([3, 4, 5], [4, 4, 7])) == 1.0
    assert rmse(P([3, 4, 5], [4, 4, 7])) == math.sqrt(5 / 3)
    assert mean_error(P([10, 20], [8, 19])) == -1.5
    assert mape(P([10], [9])) == 10.0
    assert mape(P([2, 4], [3, 2])) == 50.0
    assert r2(P([2, 4, 6], [3, 3, 3])) == -0.375
    assert r2(P([2, 4, 6], [4, 4, 4])) == 0.0
    assert r2(P([2, 4, 6], [2, 4, 6])) == 1.0


@C2
def test_constant_shift_tile():
    vals = np.random.default_rng(2).uniform(5, 40, (32, 32))
    m = evaluate_tile(tile(vals), tile(vals + 2.0))
    assert abs(m.mae - 2.0) < 1e-5 and abs(m.rmse - 2.0) < 1e-5 and abs(m.me - 2.0) < 1e-5
    assert m.r2 < 1.0


@C2
def test_underestimation_is_negative():
    y = np.random.default_rng(3).uniform(2.5, 45.0, 5000)
    assert abs(mean_error(PixelPairs(y, y - 1.11)) - (-1.11)) <= 1e-12
    # same orientation through the raster path (float32 storage limits precision here)
    t = tile(y.reshape(50, 100))
    m = evaluate_tile(t, tile(t.values.astype(np.float64) - 1.11))
    assert m.me < 0 and abs(m.me + 1.11) < 1e-5


# ---------------------------------------------------------------------------
# 3
# ---------------------------------------------------------------------------


def _write_metrics(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        for tid, model, vals, empty in rows:
            mae_, me_, br2, ee = vals
            w.writerow([tid, model, "0.5", "X", 2020, 0 if empty else 100, "true" if empty else "false",
                        mae_, mae_, me_, "", "", br2, ee, 0, 0, "2.0", 40, "fixture"])


@C3
def test_short_canopy_tile_is_empty_and_excluded(tmp_path):
    low = tile(np.full((20, 20), 1.5))
    m = evaluate_tile(low, tile(np.full((20, 20), 8.0)))
    assert m.empty and m.n_valid == 0
    assert all(math.isnan(getattr(m, f)) for f in ("mae", "rmse", "me", "mape", "r2", "block_r2", "edge_error"))

    rec = lambda tid: SampleRecord(tid, "t.tif", {}, 2020, 2020, {"X": 1.0})
    good = [evaluate_tile(*random_pair(np.random.default_rng(s), 30, 30)) for s in range(5)]
    items = [(rec(f"g{i}"), g) for i, g in enumerate(good)]
    for key in ("ecoregion", "lidar_year"):
        for field in ("mae", "me", "block_r2", "edge_error"):
            base = group_summary(items, key, field)
            with_empty = group_summary(items + [(rec("low"), m)], key, field)
            assert base == with_empty

    _write_metrics(tmp_path / "a.csv", [("g", "M", (1.0, 1.0, 1.0, 1.0), False)])
    _write_metrics(tmp_path / "b.csv", [("g", "M", (1.0, 1.0, 1.0, 1.0), False), ("low", "M", ("", "", "", ""), True)])
    cmd_report([tmp_path / "a.csv"], output_dir=tmp_path / "ra")
    cmd_report([tmp_path / "b.csv"], output_dir=tmp_path / "rb")
    for name in ("overall.csv", "by_ecoregion.csv", "by_lidar_year.csv", "summary_long.csv"):
        assert (tmp_path / "ra" / name).read_bytes() == (tmp_path / "rb" / name).read_bytes()


@C3
def test_min_height_monotone():
    rng = np.random.default_rng(4)
    thresholds = [0.0, 0.5, 1.0, 2.0, 3.0, 5.0, 10.0, 20.0, 39.0, 41.0]
    for _ in range(50):
        t, p = random_pair(rng)
        counts = [build_mask(t, p, h).n_valid for h in thresholds]
        assert all(a >= b for a, b in zip(counts, counts[1:]))


# ---------------------------------------------------------------------------
# 4
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def valid_1200():
    vals = np.random.default_rng(5).uniform(0.0, 60.0, (1200, 1200))
    return tile(vals)


@C4
@pytest.mark.parametrize("factor", [2, 4, 20, 60])
def test_average_preserves_mean(valid_1200, factor):
    out = resample(valid_1200, 0.5 * factor, "average")
    m_in = valid_1200.values.astype(np.float64).mean()
    m_out = out.values.astype(np.float64).mean()
    assert abs(m_out - m_in) <= 1e-6 * abs(m_in)


@C4
def test_chain_matches_direct(valid_1200):
    direct = resample(valid_1200, 30.0, "average")
    chain = resample(resample(valid_1200, 10.0, "average"), 30.0, "average")
    assert direct.shape == chain.shape == (20, 20)
    d, c = direct.values.astype(np.float64), chain.values.astype(np.float64)
    assert np.all(np.abs(d - c) <= 1e-6 * np.abs(d))


# ---------------------------------------------------------------------------
# 5
# ---------------------------------------------------------------------------

_stitch_seconds = []


@pytest.fixture(scope="module")
def region_4000():
    return np.random.default_rng(6).uniform(0.0, 60.0, (4000, 4000)).astype(np.float32)


@C5
@pytest.mark.parametrize("stride", [1536, 768, 384])
def test_identity_bit_consistent(region_4000, stride):
    t0 = time.perf_counter()
    out, rep = stitch_array(region_4000, identity, window=1536, stride=stride)
    _stitch_seconds.append(time.perf_counter() - t0)
    assert out.tobytes() == region_4000.tobytes()
    assert rep.provider_calls == rep.n_windows


@C5
def test_laplacian_of_difference():
    r, c = np.mgrid[0:4000, 0:4000]
    smooth = (5.0 + 0.004 * r + 0.003 * c + 2.0 * np.sin(r / 300.0) * np.cos(c / 450.0)).astype(np.float32)
    t0 = time.perf_counter()
    out, _ = stitch_array(smooth, identity, window=1536, stride=384)
    _stitch_seconds.append(time.perf_counter() - t0)
    d = out.astype(np.float64) - smooth
    lap = 4 * d[1:-1, 1:-1] - d[:-2, 1:-1] - d[2:, 1:-1] - d[1:-1, :-2] - d[1:-1, 2:]
    assert np.abs(lap).max() <= 1e-6


@C5
def test_full_materialization_oracle():
    a = np.random.default_rng(7).uniform(0.0, 60.0, (400, 400)).astype(np.float32)
    prov = mean_filter(7)
    t0 = time.perf_counter()
    out, _ = stitch_array(a, prov, window=128, stride=48, dtype=np.float64)
    _stitch_seconds.append(time.perf_counter() - t0)
    assert np.abs(out - o.stitch_full(a, prov, 128, 48)).max() <= 1e-6


@C5
def test_peak_buffered_rows_tall_region():
    rows, cols = 100_000, 64
    a = (np.arange(rows, dtype=np.float32)[:, None] * 1e-3 + np.arange(cols, dtype=np.float32)[None, :])
    plan = plan_windows(rows, cols, window=1536, stride=768)
    sink = ArraySink(rows, cols)
    t0 = time.perf_counter()
    rep = stitch_run(ArraySource(a), plan, identity, sink)
    _stitch_seconds.append(time.perf_counter() - t0)
    print(f"criterion 5: tall region peak buffered rows {rep.peak_buffered_rows} of {rows}")
    assert rep.peak_buffered_rows <= plan.window + plan.stride
    assert rep.rows_emitted == rows
    assert sink.array.tobytes() == a.tobytes()


@C5
def test_stitch_runtime():
    total = sum(_stitch_seconds)
    print(f"criterion 5: stitch runs took {total:.1f} s")
    assert len(_stitch_seconds) == 6
    assert total < 120.0


# ---------------------------------------------------------------------------
# 6
# ---------------------------------------------------------------------------


@C6
def test_group_statistics_match_sort_oracle():
    rng = np.random.default_rng(8)
    nan = math.nan
    for s in range(1000):
        n = int(rng.integers(1, 60))
        groups = rng.choice(["6.2.7", "6.2.8", "7.1.8"], n)
        vals = rng.normal(0, 5, n) if s % 2 else rng.gamma(2.0, 2.0, n)
        vals[rng.uniform(size=n) < 0.05] = 1e3  # outliers beyond the whiskers
        empty = rng.uniform(size=n) < 0.1
        items = []
        for i in range(n):
            m = TileMetrics(*([nan] * 7), 0, True) if empty[i] else TileMetrics(vals[i], nan, nan, nan, nan, nan, nan, 1)
            items.append((SampleRecord(f"t{i}", "t.tif", {}, 2020, 2020, {str(groups[i]): 1.0}), m))
        if empty.all():
            continue
        out = group_summary(items, "ecoregion", "mae")
        assert sum(v.n_tiles for v in out.values()) == int((~empty).sum())
        for g, stats in out.items():
            sample = [float(v) for v, gg, e in zip(vals, groups, empty) if gg == g and not e]
            want = o.box_loop(sample)
            got = (stats.median, stats.q1, stats.q3, stats.whisker_lo, stats.whisker_hi)
            assert all(abs(a - b) <= 1e-9 for a, b in zip(got, want)), (s, g, got, want)
            assert stats.n_tiles == len(sample)


@C6
def test_bin_me_recomposes_tile_me():
    rng = np.random.default_rng(9)
    bins = HeightBinSpec(EvalConfig().height_bins)
    for _ in range(200):
        t, p = random_pair(rng)
        mask = build_mask(t, p)
        if mask.n_valid == 0:
            continue
        per_bin = height_bin_metrics(t, p, mask, bins)
        n = sum(b.n for b in per_bin)
        assert n == mask.n_valid
        recomposed = sum(b.n * b.me for b in per_bin if b.n) / n
        assert abs(recomposed - mean_error(extract_pairs(t, p, mask))) <= 1e-9


# ---------------------------------------------------------------------------
# 7
# ---------------------------------------------------------------------------

REFERENCE_MEDIANS = [
    ("VibrantVS", 2.71, -1.11, 0.69, 0.08),
    ("Meta", 4.83, -4.03, -0.60, 0.30),
    ("LANDFIRE", 5.96, 0.92, -1.45, 0.63),
    ("ETH", 7.05, 5.65, -1.85, 0.64),
]

EXPECTED_OVERALL = (
    "model,resolution,n_tiles,mae,me,block_r2,edge_error\n"
    "VibrantVS,0.5,1,2.71,-1.11,0.69,0.08\n"
    "Meta,0.5,1,4.83,-4.03,-0.60,0.30\n"
    "LANDFIRE,0.5,1,5.96,0.92,-1.45,0.63\n"
    "ETH,0.5,1,7.05,5.65,-1.85,0.64\n"
)


@C7
def test_reference_table_roundtrip(tmp_path):
    _write_metrics(tmp_path / "metrics.csv", [("fixture", m, vals, False) for m, *vals in REFERENCE_MEDIANS])
    cmd_report([tmp_path / "metrics.csv"])
    assert (tmp_path / "overall.csv").read_text() == EXPECTED_OVERALL


@C7
def test_reference_table_as_medians(tmp_path):
    # three tiles per model straddling the reference median
    rows = []
    for m, *vals in REFERENCE_MEDIANS:
        for k, d in enumerate((-0.7, 0.0, 1.3)):
            rows.append((f"t{k}", m, [v + d for v in vals] if d else vals, False))
    _write_metrics(tmp_path / "metrics.csv", rows)
    assert main(["report", str(tmp_path / "metrics.csv"), "--group-by", ""]) == 0
    assert (tmp_path / "overall.csv").read_text() == EXPECTED_OVERALL.replace(",0.5,1,", ",0.5,3,")


# ---------------------------------------------------------------------------
# 8
# ---------------------------------------------------------------------------


def _run_pipeline(root):
    cfg = make_corpus(root, n_tiles=8, tile_px=120, models=("VibrantVS", "Meta", "LANDFIRE", "ETH"), seed=42)
    assert main(["evaluate", str(cfg)]) == 0
    out = root / "out"
    assert main(["report", str(out / "metrics.csv"), "--bins", str(out / "height_bins.csv")]) == 0
    return out


@C8
def test_end_to_end_determinism(tmp_path):
    a = _run_pipeline(tmp_path / "a")
    b = _run_pipeline(tmp_path / "b")
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    assert {"metrics.csv", "overall.csv", "by_ecoregion.csv", "run.json", "report.json"} <= set(names)
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
