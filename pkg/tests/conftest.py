import pytest

_CRITERIA = {}  # nodeid -> (number, title)
_OUTCOMES = {}  # number -> list of (passed, detail)
_DETAILS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m:
            _CRITERIA[item.nodeid] = m.args


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if item.nodeid not in _CRITERIA:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        num, _ = _CRITERIA[item.nodeid]
        _OUTCOMES.setdefault(num, []).append((rep.passed, _DETAILS.get(item.nodeid, "")))


@pytest.fixture
def detail(request):
    """Attach a one-line measurement summary to the acceptance report."""

    def put(text):
        _DETAILS[request.node.nodeid] = text

    return put


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    titles = {num: title for num, title in _CRITERIA.values()}
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in sorted(titles):
        parts = _OUTCOMES.get(num)
        if not parts:
            terminalreporter.write_line(f"criterion {num:>2} NOT RUN  {titles[num]}")
            continue
        ok = all(p for p, _ in parts)
        info = "; ".join(d for _, d in parts if d)
        terminalreporter.write_line(f"criterion {num:>2} {'PASS' if ok else 'FAIL'}  {titles[num]}  [{info}]")
