import re

import numpy as np
import pytest

from lvce.volcore import Volume


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def smooth_volume():
    """Smooth blob on a 24^3 grid with a spherical mask."""
    g = np.indices((24, 24, 24)).astype(float) - 11.5
    r2 = (g[0] / 7.0) ** 2 + (g[1] / 8.0) ** 2 + (g[2] / 6.0) ** 2
    data = np.exp(-r2) + 0.2 * np.exp(-((g[0] - 3) ** 2 + (g[1] + 2) ** 2 + g[2] ** 2) / 8.0)
    return Volume(data, (1.0, 1.0, 1.0), (0.0, 0.0, 0.0), r2 < 1.5)


# ---------------------------------------------------------------------------
# one pass/fail line per acceptance criterion in the terminal summary
# ---------------------------------------------------------------------------

_CRITERIA: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    m = re.match(r"test_criterion_(\d+)", item.name)
    if not m or "test_acceptance" not in item.nodeid:
        return
    if report.when == "call" or report.outcome != "passed":
        title = (item.function.__doc__ or item.name).strip().splitlines()[0]
        status = {"passed": "PASS", "failed": "FAIL"}.get(report.outcome, report.outcome.upper())
        _CRITERIA[int(m.group(1))] = (status, title)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(_CRITERIA):
        status, title = _CRITERIA[k]
        terminalreporter.write_line(f"criterion {k:2d}: {status}  {title}")
