import warnings

import numpy as np
import pytest

from creditloss.default_model import FactorModel
from creditloss.portfolio import CellIndex, Instrument, Portfolio

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _quiet_runtime_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


def make_instrument(iid="A", firm=1, cell=(1, 1), rating=5, pd=0.01, lgd=0.45,
                    collateralized=False, exposure=100.0, currency="CHF"):
    return Instrument(iid, firm, CellIndex(*cell), rating, pd, lgd, collateralized,
                      exposure, currency)


@pytest.fixture
def two_cell_model():
    """Two regions, two industries; region factors correlated at 0.5."""
    return FactorModel(
        b={(1, 1): 0.2, (2, 1): 0.15, (1, 2): 0.25, (2, 2): 0.1},
        chi={1: 0.05, 2: 0.08},
        rho=np.array([[1.0, 0.5], [0.5, 1.0]]),
        regions=(1, 2),
        default_tau=0.3,
    )


@pytest.fixture
def small_portfolio():
    return Portfolio((
        make_instrument("A", 1, (1, 1), 3, 0.02, 0.4, True, 100.0),
        make_instrument("B", 2, (2, 1), 10, 0.05, 0.6, False, 50.0),
        make_instrument("C", 3, (1, 2), 20, 0.10, 0.3, False, 80.0),
    ), currency="CHF")


def simple_model_a(cells, z_mean=1.0, z_var=0.09, psi=0.0):
    """Model A calibration with independent-across-cells Z and a common psi."""
    import pandas as pd

    from creditloss.model_a import ModelACalibration

    cells = [CellIndex(*c) for c in cells]
    theta = pd.DataFrame(np.eye(len(cells)) * z_var, index=cells, columns=cells)
    psi_df = pd.DataFrame(np.eye(len(cells)) * psi, index=cells, columns=cells)
    empty = pd.DataFrame(dtype=float)
    return ModelACalibration(empty, empty, {c: 0.45 for c in cells},
                             {c: z_mean for c in cells}, theta, psi_df)


def simple_model_b(xi=3.0):
    from creditloss.model_b import ModelBCalibration

    lam = 1.0 / (9.0 * xi)
    return ModelBCalibration({}, {}, {}, lam, lam, xi)
