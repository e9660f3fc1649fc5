import sys
from collections import defaultdict
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> list of (test name, outcome, detail)
_criteria: dict = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion checked by this test")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        if report.skipped:
            detail = detail or str(report.longrepr[-1]) if isinstance(report.longrepr, tuple) else detail
        _criteria[marker.args[0]].append((item.name, report.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        results = _criteria[n]
        outcomes = {o for _, o, _ in results}
        status = "FAIL" if "failed" in outcomes else "SKIP" if outcomes == {"skipped"} else "PASS"
        terminalreporter.write_line(f"criterion {n:>2}: {status}")
        for name, outcome, detail in results:
            terminalreporter.write_line(f"    {outcome:<7} {name}" + (f"  [{detail}]" if detail else ""))
