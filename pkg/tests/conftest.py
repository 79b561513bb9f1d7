from __future__ import annotations

import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

SUITE_BUDGET_S = 60.0
_results: dict[int, tuple[str, list[str]]] = {}
_titles: dict[int, str] = {}
_started = time.perf_counter()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark:
            number, title = mark.args
            _titles[number] = title


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if not mark or (rep.when != "call" and rep.passed):
        return
    number = mark.args[0]
    status, names = _results.get(number, ("PASS", []))
    if rep.failed or rep.skipped:
        status = "FAIL" if rep.failed else ("SKIP" if status == "PASS" else status)
    names.append(item.name)
    _results[number] = (status, names)


def _suite_line(elapsed: float) -> str:
    ok = elapsed < SUITE_BUDGET_S
    return f"[{'PASS' if ok else 'FAIL'}] suite wall-clock {elapsed:.1f}s (budget {SUITE_BUDGET_S:.0f}s)"


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_titles):
        status, names = _results.get(number, ("NOT RUN", []))
        tr.write_line(f"[{status}] {number:>2}. {_titles[number]} ({len(set(names))} checks)")
    tr.write_line(_suite_line(time.perf_counter() - _started))


def pytest_sessionfinish(session, exitstatus):
    # The wall-clock budget only applies to a full, unfiltered run.
    if _results and len(_titles) == 12 and time.perf_counter() - _started >= SUITE_BUDGET_S:
        session.exitstatus = pytest.ExitCode.TESTS_FAILED
