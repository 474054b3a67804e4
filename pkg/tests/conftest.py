"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""

import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

_CRITERIA = {}  # nodeid -> (number, title)
_RESULTS = {}  # number -> [title, passed, seconds]


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion implemented by the test")


def pytest_collection_modifyitems(config, items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            _CRITERIA[item.nodeid] = mark.args


def pytest_runtest_logreport(report):
    if report.nodeid not in _CRITERIA:
        return
    number, title = _CRITERIA[report.nodeid]
    entry = _RESULTS.setdefault(number, [title, True, 0.0])
    entry[2] += report.duration
    if report.failed:
        entry[1] = False


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, passed, seconds = _RESULTS[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {number:2d}. {title} ({seconds:.1f} s)")
