import pytest

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when != "call" and not report.failed:
        return
    num = marker.args[0]
    detail = dict(item.user_properties).get("detail", "")
    if report.failed and not detail and call.excinfo is not None:
        detail = str(call.excinfo.value).splitlines()[0] if str(call.excinfo.value) else call.excinfo.typename
    # one failing test is enough to fail its criterion
    if _CRITERIA.get(num, ("PASS",))[0] == "FAIL":
        return
    _CRITERIA[num] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        status, detail = _CRITERIA[num]
        terminalreporter.write_line(f"criterion {num}: {status}  {detail}")
