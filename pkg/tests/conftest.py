import pytest

# criterion number -> (title, passed so far)
_verdicts: dict[int, tuple[str, bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        rep.criterion = (mark.args[0], mark.args[1])


def pytest_runtest_logreport(report):
    crit = getattr(report, "criterion", None)
    if crit is None or not (report.when == "call" or report.failed):
        return
    n, title = crit
    prev = _verdicts.get(n, (title, True))[1]
    _verdicts[n] = (title, prev and not report.failed)


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_verdicts):
        title, ok = _verdicts[n]
        terminalreporter.write_line(f"criterion {n:2d}  {'PASS' if ok else 'FAIL'}  {title}")
