import numpy as np
import pytest

from mlmc_risk.hierarchy import Sampler, SamplerConfig
from mlmc_risk.models import BlackScholesModel, PoissonModel
from mlmc_risk.spline import ThetaGrid

# reference values: tau -> (q_tau, c_tau)
POISSON_TABLE = {
    0.6: (1.611077, 2.369803),
    0.7: (1.885696, 2.578204),
    0.8: (2.225169, 2.843327),
    0.9: (2.715390, 3.236473),
}
BS_TABLE = {
    0.6: (0.799151, 2.455898),
    0.7: (1.373571, 2.914953),
    0.8: (2.086595, 3.515684),
    0.9: (3.153379, 4.460298),
}


@pytest.fixture
def poisson_sampler():
    return Sampler(PoissonModel(), SamplerConfig("poisson", base_seed=1234))


@pytest.fixture
def bs_sampler():
    return Sampler(BlackScholesModel(), SamplerConfig("black_scholes", base_seed=1234))


@pytest.fixture
def grid():
    return ThetaGrid(1.5, 2.5, 10)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[number])
