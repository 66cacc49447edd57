import numpy as np
import pytest

from bmdlink.dataset import DoseResponseDataset, center
from bmdlink.likelihood import fit_mle

# lung tumour incidence in rats exposed to 1-bromopropane (ppm, 50 per group)
BROMOPROPANE = dict(doses=[0.0, 62.5, 125.0, 250.0], trials=[50, 50, 50, 50], events=[1, 9, 8, 14])

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(criterion: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def bromo_data():
    return DoseResponseDataset.from_arrays(**BROMOPROPANE)


@pytest.fixture(scope="session")
def bromo_design(bromo_data):
    return center(bromo_data, normalize=True)


@pytest.fixture(scope="session")
def bromo_fit(bromo_data, bromo_design):
    return fit_mle(bromo_design, bromo_data)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
