import warnings

import numpy as np
import pytest

from priorci.bioassay import bioassay_spec, morphine_amidone
from priorci.ciuupi import BSFunctions, CiuupiConfig, optimize_bs
from priorci.localframe import build_frame
from priorci.regmodel import LinearFunctional, LinearNormalModel, fit_mle

RHO_TILDE = -0.399855

_ACCEPTANCE = []


def record_criterion(number: int, passed: bool, detail: str) -> str:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    _ACCEPTANCE.append((number, line))
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE):
        terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _quiet_small_runs():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="fewer than 1000 runs")
        yield


@pytest.fixture(scope="session")
def data():
    return morphine_amidone()


@pytest.fixture(scope="session")
def spec(data):
    return bioassay_spec(data, z=60.0)


@pytest.fixture(scope="session")
def fit(spec):
    return fit_mle(spec)


@pytest.fixture(scope="session")
def frame(spec, fit):
    return build_frame(spec, fit.beta)


@pytest.fixture(scope="session")
def cfg():
    return CiuupiConfig()


@pytest.fixture(scope="session")
def bs_tilde(cfg):
    return optimize_bs(cfg, RHO_TILDE)


@pytest.fixture(scope="session")
def bs_usual():
    return BSFunctions.usual(0.05)


def linear_normal_spec(seed: int = 3, n: int = 30, sigma2: float = 1.5, t: float = 0.0):
    """Linear model with known variance; g and h are linear contrasts."""
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.normal(size=n), rng.normal(size=n)])
    beta = np.array([0.5, 1.0, -0.7])
    y = X @ beta + np.sqrt(sigma2) * rng.normal(size=n)
    return LinearNormalModel(X=X, y=y, g=LinearFunctional([0.0, 1.0, 0.3]),
                             h=LinearFunctional([0.0, 0.4, 1.0]), t=t, sigma2=sigma2)


@pytest.fixture(scope="session")
def linear_spec():
    return linear_normal_spec()
