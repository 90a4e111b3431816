from __future__ import annotations

import time

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_RESULTS: dict[int, tuple[str, str, float, float]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title, limit): acceptance criterion with a time limit")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_call(item):
    start = time.perf_counter()
    yield
    item.elapsed = time.perf_counter() - start


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    number, title, limit = mark.args
    elapsed = getattr(item, "elapsed", call.duration)
    ok = rep.passed and elapsed < limit
    if rep.passed and not ok:
        rep.outcome = "failed"
        rep.longrepr = f"criterion {number} took {elapsed:.2f} s, limit {limit} s"
    _RESULTS[number] = (title, "PASS" if ok else "FAIL", elapsed, limit)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, status, elapsed, limit = _RESULTS[number]
        terminalreporter.write_line(f"criterion {number} {status}: {title} ({elapsed:.2f} s, limit {limit} s)")
