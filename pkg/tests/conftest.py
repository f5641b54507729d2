import numpy as np
import pytest

from walkerpose.geometry import CameraIntrinsics, default_rig
from walkerpose.skeleton import default_topology


@pytest.fixture
def cam():
    return CameraIntrinsics(fx=100.0, fy=100.0, cx=64.0, cy=112.0, width=128, height=224)


@pytest.fixture(scope="session")
def topo():
    return default_topology()


@pytest.fixture(scope="session")
def rig():
    return default_rig()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
