import numpy as np
import pytest

from smoothdiv.measures import Gaussian, GaussianMixture, PointCloud, UniformBox

ACCEPTANCE_LINES = []


def record_criterion(number, name, passed, detail):
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def families(d):
    """One spec per family in dimension d."""
    eye = np.eye(d)
    return {
        "gaussian": Gaussian(np.zeros(d), 0.25 * eye),
        "mixture": GaussianMixture([0.3, 0.7], (Gaussian(-np.ones(d), 0.5 * eye), Gaussian(np.ones(d), 0.2 * eye))),
        "box": UniformBox(np.zeros(d), np.ones(d)),
        "cloud": PointCloud(np.array([np.full(d, -1.0), np.zeros(d), np.full(d, 2.0)]), [0.2, 0.5, 0.3]),
    }


@pytest.fixture
def g025():
    return Gaussian([0.0], [[0.25]])


@pytest.fixture
def point_mass():
    return PointCloud([[0.0]])
