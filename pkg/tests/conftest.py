"""Shared pytest hooks: render one verdict line per acceptance criterion."""

from __future__ import annotations

import re

_CRITERION = re.compile(r"test_criterion_(\d+)")
_verdicts: dict[int, str] = {}


def pytest_runtest_logreport(report):
    match = _CRITERION.search(report.nodeid)
    if match is None:
        return
    number = int(match.group(1))
    if report.when == "call":
        _verdicts[number] = "PASS" if report.passed else "FAIL"
    elif report.when == "setup" and report.skipped:
        _verdicts[number] = "SKIP"
    elif report.when == "setup" and report.failed:
        _verdicts[number] = "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_verdicts):
        terminalreporter.write_line(f"criterion {number:2d}: {_verdicts[number]}")
