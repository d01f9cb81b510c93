import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import re

_criteria = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_criterion_(\d+)_", report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.failed:
        _criteria[n] = "FAIL"
    elif report.when == "call" and report.passed:
        _criteria.setdefault(n, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        terminalreporter.write_line(f"CRITERION {n}: {_criteria[n]}")
