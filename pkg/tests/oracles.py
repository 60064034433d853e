"""
Naive reference implementations used as test oracles.

Everything here is written as plain Python loops over lists so that it shares
no code path with the vectorized kernels under test.
"""

import math


def to_lists(arr):
    return [[float(v) for v in row] for row in arr]


def is_valid(v, nodata):
    if math.isnan(v) or math.isinf(v):
        return False
    if math.isnan(nodata):
        return True
    return v != nodata


def mask_loop(truth, pred, nodata_t, nodata_p, min_height):
    rows, cols = len(truth), len(truth[0])
    out = [[False] * cols for _ in range(rows)]
    for r in range(rows):
        for c in range(cols):
            t, p = truth[r][c], pred[r][c]
            out[r][c] = is_valid(t, nodata_t) and is_valid(p, nodata_p) and t >= min_height
    return out


def pairs_loop(truth, pred, mask):
    y, yh = [], []
    for r in range(len(truth)):
        for c in range(len(truth[0])):
            if mask[r][c]:
                y.append(truth[r][c])
                yh.append(pred[r][c])
    return y, yh


def mae_loop(y, yh):
    s = 0.0
    for a, b in zip(y, yh):
        s += abs(a - b)
    return s / len(y)


def rmse_loop(y, yh):
    s = 0.0
    for a, b in zip(y, yh):
        s += (a - b) ** 2
    return math.sqrt(s / len(y))


def me_loop(y, yh):
    s = 0.0
    for a, b in zip(y, yh):
        s += b - a
    return s / len(y)


def mape_loop(y, yh):
    s = 0.0
    for a, b in zip(y, yh):
        s += abs(a - b) / a
    return 100.0 * s / len(y)


def r2_loop(y, yh):
    mean = sum(y) / len(y)
    sse = sst = 0.0
    for a, b in zip(y, yh):
        sse += (a - b) ** 2
        sst += (a - mean) ** 2
    return 1.0 - sse / sst


def block_r2_loop(truth, pred, mask, bp):
    rows, cols = len(truth), len(truth[0])
    sse = sst = 0.0
    for br in range(0, rows, bp):
        for bc in range(0, cols, bp):
            ys, yhs = [], []
            for r in range(br, min(br + bp, rows)):
                for c in range(bc, min(bc + bp, cols)):
                    if mask[r][c]:
                        ys.append(truth[r][c])
                        yhs.append(pred[r][c])
            if not ys:
                continue
            mean = sum(ys) / len(ys)
            for a, b in zip(ys, yhs):
                sse += (a - b) ** 2
                sst += (a - mean) ** 2
    return 1.0 - sse / sst


SOBEL_X = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]
SOBEL_Y = [[-1, -2, -1], [0, 0, 0], [1, 2, 1]]


def sobel_loop(grid):
    rows, cols = len(grid), len(grid[0])

    def at(r, c):
        return grid[min(max(r, 0), rows - 1)][min(max(c, 0), cols - 1)]

    out = [[0.0] * cols for _ in range(rows)]
    for r in range(rows):
        for c in range(cols):
            gx = gy = 0.0
            for i in range(3):
                for j in range(3):
                    v = at(r + i - 1, c + j - 1)
                    gx += SOBEL_X[i][j] * v
                    gy += SOBEL_Y[i][j] * v
            out[r][c] = math.sqrt(gx * gx + gy * gy)
    return out


def edge_error_loop(truth, pred, mask):
    rows, cols = len(truth), len(truth[0])
    zt = [[truth[r][c] if mask[r][c] else 0.0 for c in range(cols)] for r in range(rows)]
    zp = [[pred[r][c] if mask[r][c] else 0.0 for c in range(cols)] for r in range(rows)]
    et, ep = sobel_loop(zt), sobel_loop(zp)
    s, n = 0.0, 0
    for r in range(rows):
        for c in range(cols):
            if mask[r][c]:
                s += abs(ep[r][c] - et[r][c])
                n += 1
    return s / n


def bin_index(v, edges, open_last=False):
    for k in range(len(edges) - 1):
        if edges[k] <= v < edges[k + 1]:
            return k
    if open_last and v >= edges[-1]:
        return len(edges) - 1
    return None


def hist_loop(y, yh, edges):
    nb = len(edges) - 1
    counts = [[0] * nb for _ in range(nb)]
    overflow = 0
    for a, b in zip(y, yh):
        i, j = bin_index(a, edges), bin_index(b, edges)
        if i is None or j is None:
            overflow += 1
        else:
            counts[i][j] += 1
    return counts, overflow


def height_bins_loop(y, yh, edges):
    """Per open-ended bin: (n, me, mae) or (0, None, None)."""
    acc = [[0, 0.0, 0.0] for _ in edges]
    for a, b in zip(y, yh):
        k = bin_index(a, edges, open_last=True)
        if k is None:
            continue
        acc[k][0] += 1
        acc[k][1] += b - a
        acc[k][2] += abs(b - a)
    return [(n, s / n, sa / n) if n else (0, None, None) for n, s, sa in acc]


def quantile_sorted(values, q):
    """Linear interpolation between closest ranks on the sorted sample."""
    v = sorted(values)
    pos = q * (len(v) - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (pos - lo) * (v[hi] - v[lo])


def box_loop(values):
    v = sorted(values)
    q1, med, q3 = quantile_sorted(v, 0.25), quantile_sorted(v, 0.5), quantile_sorted(v, 0.75)
    iqr = q3 - q1
    inside = [x for x in v if q1 - 1.5 * iqr <= x <= q3 + 1.5 * iqr]
    return med, q1, q3, inside[0], inside[-1]


def block_mean_loop(grid, k, nodata):
    rows, cols = len(grid), len(grid[0])
    out = []
    for br in range(0, rows, k):
        row = []
        for bc in range(0, cols, k):
            s, n = 0.0, 0
            for r in range(br, min(br + k, rows)):
                for c in range(bc, min(bc + k, cols)):
                    if is_valid(grid[r][c], nodata):
                        s += grid[r][c]
                        n += 1
            row.append(s / n if n else nodata)
        out.append(row)
    return out


def offsets_loop(n, window, stride):
    if n <= window:
        return [0]
    out = list(range(0, n - window, stride))
    if out[-1] != n - window:
        out.append(n - window)
    return out


def taper_loop(window, cosine=True):
    if not cosine:
        return [1.0] * window
    return [0.5 - 0.5 * math.cos(2 * math.pi * (i + 0.5) / window) for i in range(window)]


def stitch_full(array, provider, window, stride, cosine=True):
    """Whole-region accumulators: every window's weighted output added into full-size sums."""
    import numpy as np

    rows, cols = array.shape
    acc = np.zeros((rows, cols))
    wsum = np.zeros((rows, cols))
    t = taper_loop(window, cosine)
    for r in offsets_loop(rows, window, stride):
        for c in offsets_loop(cols, window, stride):
            grid = array[r:r + window, c:c + window]
            h, w = grid.shape
            grid = np.pad(grid, ((0, window - h), (0, window - w)), mode="symmetric")
            out = np.asarray(provider(grid), dtype=np.float64)[:h, :w]
            for i in range(h):
                wi = t[i]
                acc[r + i, c:c + w] += [wi * t[j] * out[i, j] for j in range(w)]
                wsum[r + i, c:c + w] += [wi * t[j] for j in range(w)]
    return acc / wsum
