import warnings

import numpy as np
import pytest

from rydcav.scenario import load_scenario, preset_path

ACCEPTANCE = []


def record(number, title, passed, detail=""):
    line = f"ACCEPTANCE {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def free_scn():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        s = load_scenario(preset_path("free_space"))
        s.heterodyne
    return s


@pytest.fixture(scope="session")
def cavity_scn():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        s = load_scenario(preset_path("cavity"))
        s.heterodyne
    return s


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
