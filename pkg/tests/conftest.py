import numpy as np
import pytest

from chmeval.raster import DEFAULT_NODATA, GeoTransform, RasterTile


def tile(values, pixel_size=0.5, origin=(0.0, 0.0), nodata=DEFAULT_NODATA):
    return RasterTile(np.asarray(values, dtype=np.float32), GeoTransform(origin[0], origin[1], pixel_size, pixel_size), nodata)


def random_pair(rng, rows=None, cols=None, nodata=DEFAULT_NODATA, max_side=64):
    """Truth/prediction tiles with sub-2 m ground, crowns, and scattered nodata in both."""
    rows = rows or int(rng.integers(3, max_side + 1))
    cols = cols or int(rng.integers(3, max_side + 1))
    truth = rng.uniform(0.0, 40.0, (rows, cols))
    truth[rng.uniform(size=(rows, cols)) < 0.25] = rng.uniform(0.0, 2.0)
    pred = truth + rng.normal(-0.5, 3.0, (rows, cols))
    pred = np.clip(pred, 0.0, None)
    truth[rng.uniform(size=(rows, cols)) < 0.08] = nodata
    pred[rng.uniform(size=(rows, cols)) < 0.04] = nodata
    return tile(truth, nodata=nodata), tile(pred, nodata=nodata)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# -- acceptance reporting: one pass/fail line per criterion -----------------

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion the test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    n, title = mark.args
    _, ok = _criteria.get(n, (title, True))
    _criteria[n] = (title, ok and not rep.failed)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, ok = _criteria[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}")
