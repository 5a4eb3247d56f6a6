import json

import pytest

from mvnonlinear.market import MarketParams

CONSTANTS = {"format": 1, "r": 0.05, "theta_low": 0.2, "theta_high": 0.3, "sigma": 0.3, "horizon": 1.0}


@pytest.fixture(scope="session")
def market():
    return MarketParams.constant(r=0.05, theta_low=0.2, theta_high=0.3, sigma=0.3, horizon=1.0)


@pytest.fixture
def market_file(tmp_path):
    path = tmp_path / "market.json"
    path.write_text(json.dumps(CONSTANTS))
    return path


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
