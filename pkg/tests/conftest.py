import time

import pytest

from tubewcp.wcp import run_wcp

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.fixture(scope="session")
def flagship_run():
    """The flagship comparison run, shared by every test that inspects it."""
    t0 = time.perf_counter()
    run = run_wcp()
    run.elapsed = time.perf_counter() - t0
    return run


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when == "teardown":
        return
    number, title = marker.args
    # setup time counts too: the flagship run happens in its fixture
    ok = call.excinfo is None
    prev = _CRITERIA.get(number, (title, True, 0.0))
    _CRITERIA[number] = (title, prev[1] and ok, prev[2] + call.duration)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, duration = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}  ({duration:.2f} s)")
