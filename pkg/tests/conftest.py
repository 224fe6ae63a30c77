"""Collects acceptance-criterion outcomes and prints one line per criterion."""
import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    failed = report.failed or (report.when == "call" and report.skipped)
    if report.when == "call" or failed:
        details = "; ".join(str(v) for k, v in item.user_properties if k == "measured")
        prev = _RESULTS.get(number)
        status = "FAIL" if failed or (prev and prev[1] == "FAIL") else "PASS"
        _RESULTS[number] = (title, status, details)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, status, details = _RESULTS[number]
        line = f"criterion {number:2d} {status}  {title}"
        if details:
            line += f"  [{details}]"
        terminalreporter.write_line(line)
