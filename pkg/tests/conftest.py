"""Acceptance-criterion bookkeeping: one pass/fail line per criterion at the end of the run."""

import pytest

_RESULTS: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance(number, title): test implementing one acceptance criterion"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    entry = _RESULTS.setdefault(number, [title, "PASS", []])
    if rep.failed:
        entry[1] = "FAIL"
        entry[2].append(item.name)
    elif rep.skipped and entry[1] == "PASS" and rep.when != "teardown":
        entry[1] = "SKIP"


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, status, failed = _RESULTS[number]
        line = f"criterion {number:2d}: {status}  {title}"
        if failed:
            line += f"  (failed: {', '.join(failed)})"
        terminalreporter.write_line(line)
