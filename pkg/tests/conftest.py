import numpy as np
import pytest

from cfisac.comm_metrics import SinrCoefficients
from cfisac.scenario import ScenarioConfig


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_config():
    """A few APs and UEs; keeps drop preparation in the tens of milliseconds."""
    return ScenarioConfig(n_tx=4, n_rx=1, n_ue=2, m_antennas=2, tau_sense=6, seed=7)


def random_coefficients(rng, n_ue, n_tx, *, leak=0.05, cross=0.05):
    """Random SINR statistics for which moderate targets are usually attainable."""
    b = rng.uniform(2.0, 6.0, n_ue)
    a = rng.uniform(0.0, cross, (n_ue, n_ue + 1))
    a[:, 0] = rng.uniform(0.0, leak, n_ue)
    F = rng.uniform(0.1, 0.6, (n_tx, n_ue + 1))
    return SinrCoefficients(b=b, a=a, sigma=1.0), F


def random_quadratics(rng, size, clutter=1.0):
    from cfisac.power_allocation import SensingQuadratics

    P = rng.standard_normal((size, size))
    Q = rng.standard_normal((size, size))
    return SensingQuadratics(P @ P.T + 0.1 * np.eye(size), clutter * (Q @ Q.T), 4.0)


ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
