import sys
from pathlib import Path

import pytest

# lets tests import the standalone oracle module
sys.path.insert(0, str(Path(__file__).parent))

_acceptance: dict[int, tuple[str, str, float]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        _acceptance[number] = (title, status, rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        title, status, duration = _acceptance[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {title}  ({duration:.2f}s)")
