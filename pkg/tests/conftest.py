import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    key = mark.args
    failed = report.failed or (report.when == "call" and report.skipped)
    if failed:
        _RESULTS[key] = "FAIL"
    elif report.when == "call":
        _RESULTS.setdefault(key, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), verdict in sorted(_RESULTS.items()):
        terminalreporter.write_line(f"criterion {number:>2} {verdict}  {title}")
