import math

import pytest

from artifact.covariance import IsotropicCovariance
from artifact.fieldsim import AffineModel


@pytest.fixture
def unit_cov():
    return IsotropicCovariance(1.0, 1.0)


@pytest.fixture
def aniso_model():
    """lambda = 0.5, theta_o = pi/6, lambda1 = 1, v* = e1."""
    return AffineModel.from_theta(1.0, 0.5, math.pi / 6)


@pytest.fixture
def iso_model():
    return AffineModel(1.0, 1.0, 0.0, (1.0, 0.0))


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """Collects ``(criterion, ok, detail, seconds)`` for the terminal summary.

    A criterion that raises before logging still gets a FAIL line.
    """
    log = request.config.stash.setdefault(ACCEPTANCE_KEY, [])
    number = int(request.node.name.split("_")[2])
    yield log
    if not any(entry[0] == number for entry in log):
        log.append((number, False, "raised before completing, see the traceback above", 0.0))


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail, seconds in sorted(lines):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}  [{seconds:.1f} s]")
