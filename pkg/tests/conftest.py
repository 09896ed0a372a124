import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dyadicweights.construction import build_weight, solve_parameters


@pytest.fixture(scope="session")
def weights():
    """Small exact weights shared across modules, keyed by (k, levels)."""
    cache = {}

    def get(k, levels, mode="exact"):
        key = (k, levels, mode)
        if key not in cache:
            cache[key] = build_weight(solve_parameters(k).with_levels(levels), mode=mode)
        return cache[key]

    return get


_criteria: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    n = mark.args[0]
    ok, details = _criteria.get(n, (True, []))
    details = details + [str(v) for k, v in item.user_properties if k == "detail"]
    _criteria[n] = (ok and rep.passed, details)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_criteria):
        ok, details = _criteria[n]
        extra = f"  ({'; '.join(dict.fromkeys(details))})" if details else ""
        terminalreporter.write_line(f"CRITERION {n}: {'PASS' if ok else 'FAIL'}{extra}")
