import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call":
        return
    n = mark.args[0]
    detail = dict(item.user_properties).get("detail", "")
    ok = call.excinfo is None
    prev = _CRITERIA.get(n)
    _CRITERIA[n] = (ok and (prev is None or prev[0]), "; ".join(filter(None, [prev and prev[1], detail])))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
