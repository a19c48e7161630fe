import numpy as np
import pytest

from plate_pipeline.imaging import Image


def brute_convolve(plane, weights):
    """Direct double-loop true convolution with replicate-edge padding."""
    h, w = len(plane), len(plane[0])
    k = len(weights)
    r = k // 2
    out = [[0.0] * w for _ in range(h)]
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for i in range(k):
                for j in range(k):
                    sy = min(max(y - (i - r), 0), h - 1)
                    sx = min(max(x - (j - r), 0), w - 1)
                    acc += weights[i][j] * plane[sy][sx]
            out[y][x] = acc
    return out


def pop_variance(values):
    flat = [v for row in values for v in row]
    m = sum(flat) / len(flat)
    return sum((v - m) ** 2 for v in flat) / len(flat)


@pytest.fixture
def step4():
    """4x4 gray frame: two columns of 0, two columns of 255."""
    return Image(np.array([[0, 0, 255, 255]] * 4, dtype=np.uint8))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance reporting ----------------------------------------------------

_ACCEPTANCE = {}
_LABELS = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    # a setup failure or skip is the final word; otherwise the call phase is
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _ACCEPTANCE[mark.kwargs["criterion"]] = (mark.kwargs["title"], mark.kwargs["limit"],
                                                 _LABELS[rep.outcome], rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, (title, limit, label, duration) in sorted(_ACCEPTANCE.items()):
        terminalreporter.line(f"{label} criterion {n}: {title} ({duration:.2f} s, limit {limit:g} s)")
