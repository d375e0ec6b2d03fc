import os
import sys
import tempfile

import pytest

# keep the wedge table cache out of the home directory during tests
os.environ.setdefault("ARRATIA_CHAOS_CACHE", os.path.join(tempfile.gettempdir(), "arratia-chaos-test-cache"))


@pytest.fixture
def grid():
    from arratia_chaos.rng import make_grid
    return make_grid(1.0, 256)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for ln in lines:
            terminalreporter.write_line(ln)
