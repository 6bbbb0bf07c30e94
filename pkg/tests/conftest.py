import pytest

_verdicts: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when == "teardown":
        return
    n, title = mark.args
    if report.failed:
        _verdicts[n] = ("FAIL", title)
    elif report.when == "call":
        _verdicts[n] = ("PASS", title)


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_verdicts):
        verdict, title = _verdicts[n]
        terminalreporter.write_line(f"criterion {n:2d} {verdict}  {title}")
