import pytest

from fleettwin.roadgraph import build_default_map

_criteria = {}


@pytest.fixture(scope="session")
def default_map():
    return build_default_map()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    num, text = mark.args
    failed = report.failed or (report.when == "call" and report.skipped)
    if report.when == "call" or failed:
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        prev = _criteria.get(num, (True, text, []))
        _criteria[num] = (prev[0] and not failed, text, prev[2] + ([detail] if detail else []))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria):
        ok, text, details = _criteria[num]
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {num:>2}: {text}"
        if details:
            line += '  (' + '; '.join(details) + ')'
        terminalreporter.write_line(line)
