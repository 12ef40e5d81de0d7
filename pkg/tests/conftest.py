import numpy as np
import pytest

from dslic.fixtures import write_desk_scenes
from dslic.transforms import load_scenes

_ACCEPTANCE = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def desk_dir(tmp_path_factory):
    return write_desk_scenes(str(tmp_path_factory.mktemp("desk")))


@pytest.fixture(scope="session")
def desk_scenes(desk_dir):
    return load_scenes(desk_dir)


@pytest.fixture
def record_criterion():
    def record(name, passed, detail):
        _ACCEPTANCE.append((name, passed, detail))
        print(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
