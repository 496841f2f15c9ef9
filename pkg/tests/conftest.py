"""Per-criterion PASS/FAIL summary for tests marked ``criterion(k)``."""

from collections import defaultdict

import pytest

_outcomes = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(k): acceptance criterion number k")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    # a failing setup (fixture) or call counts against the criterion; skips count for nothing
    if report.when == "call" or report.failed:
        if report.skipped and not report.failed:
            return
        _outcomes[marker.args[0]].append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_outcomes):
        results = _outcomes[k]
        verdict = "PASS" if results and all(results) else "FAIL"
        terminalreporter.write_line(f"criterion {k:>2}: {verdict} ({sum(results)}/{len(results)} tests passed)")
