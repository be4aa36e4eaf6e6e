import pytest

# (number, status, title, detail) for every test marked with @pytest.mark.criterion
_CRITERIA = []
_STATUS = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = dict(item.user_properties).get("detail", "")
        if rep.skipped and isinstance(rep.longrepr, tuple):
            detail = detail or rep.longrepr[2].removeprefix("Skipped: ")
        _CRITERIA.append((mark.args[0], _STATUS[rep.outcome], mark.args[1], detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num, status, title, detail in sorted(_CRITERIA):
        line = f"{status} criterion {num:>2}: {title}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
