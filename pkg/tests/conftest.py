import sys
from functools import lru_cache
from pathlib import Path

import pytest

from gdtre import fixtures, riccati

HERE = Path(__file__).parent
FIXTURE_DIR = HERE / "fixtures"
sys.path.insert(0, str(HERE))

ALL = list(fixtures.FIXTURES)


@lru_cache(maxsize=None)
def spec_of(name):
    return fixtures.FIXTURES[name]()


@lru_cache(maxsize=None)
def solution_of(name):
    return riccati.stabilizing_solve(spec_of(name))


@pytest.fixture(params=ALL)
def fixture_name(request):
    return request.param


@pytest.fixture
def fixture_path():
    return lambda name: FIXTURE_DIR / f"{name}.json"


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
