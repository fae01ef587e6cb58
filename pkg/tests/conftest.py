import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by the test")
    config._criteria = {}


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    crit = item.config._criteria.setdefault(n, {"title": title, "ok": True, "seen": False})
    if call.when == "call":
        crit["seen"] = True
    if call.excinfo is not None:
        crit["ok"] = False


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    crits = getattr(config, "_criteria", {})
    if not crits:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(crits):
        c = crits[n]
        status = "PASS" if c["ok"] and c["seen"] else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {c['title']}")
