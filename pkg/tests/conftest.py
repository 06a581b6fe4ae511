"""Collects acceptance-criterion outcomes and prints one verdict line per criterion."""

from __future__ import annotations

import pytest

_OUTCOMES: dict[int, list[str]] = {}
_TITLES: dict[int, str] = {}
_NOTES: dict[int, list[str]] = {}


def _criterion(item):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return None
    number, title = marker.args
    _TITLES[number] = title
    return number


def pytest_collection_finish(session):
    # runs after -k/-m deselection, so only selected criteria are reported
    for item in session.items:
        number = _criterion(item)
        if number is not None:
            _OUTCOMES.setdefault(number, [])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    number = _criterion(item)
    if number is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _OUTCOMES[number].append("skipped" if report.skipped else report.outcome)
        if report.skipped and isinstance(report.longrepr, tuple):
            _NOTES.setdefault(number, []).append(report.longrepr[2].removeprefix("Skipped: "))


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        results = _OUTCOMES[number]
        if not results:
            verdict = "NOT RUN"
        elif "failed" in results:
            verdict = "FAIL"
        elif all(r == "skipped" for r in results):
            verdict = "SKIP"
        else:
            verdict = "PASS"
        line = f"criterion {number:2d}: {verdict:<7} {_TITLES[number]}"
        if verdict == "SKIP" and number in _NOTES:
            line += f" ({_NOTES[number][0]})"
        terminalreporter.write_line(line)
