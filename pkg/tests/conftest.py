import sys
from pathlib import Path

import numpy as np
import pytest

from evoattack.fixtures import FixtureSpec, generate_fixtures

DOUBLE = Path(__file__).parent / "doubles" / "oracle_double.py"
DATA = Path(__file__).parent / "data"

_criteria = {}


def double_cmd(*args):
    return [sys.executable, str(DOUBLE), *map(str, args)]


@pytest.fixture(scope="session")
def fixture_tree(tmp_path_factory):
    """Default desk-scale fixture: 16x16x3 images, 4 classes, 20 images, seed 0."""
    root = tmp_path_factory.mktemp("fixture")
    model_path, data_dir = generate_fixtures(0, root, FixtureSpec())
    return model_path, data_dir


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    label = marker.args[0]
    failed = call.excinfo is not None and call.when in ("setup", "call")
    state = _criteria.setdefault(label, [True, 0])
    if failed:
        state[0] = False
    if call.when == "call":
        state[1] += 1


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_criteria, key=lambda s: int(s.split()[0].lstrip("AC").rstrip(":"))):
        ok, count = _criteria[label]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}  ({count} test(s))")
