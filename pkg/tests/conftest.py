import pytest

from src.ocp.problem import build_problem
from src.quadrature.beta_box import BetaParameterBox


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run desk-scale acceptance runs")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale acceptance run, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def graetz_box():
    return BetaParameterBox((1.0, 0.5), (1e5, 1.5), (5.0, 5.0), (3.0, 3.0))


@pytest.fixture(scope="session")
def square_box():
    return BetaParameterBox((1.0, 0.9), (4e4, 1.5), (10.0, 10.0), (10.0, 10.0))


@pytest.fixture(scope="session")
def graetz_steady(graetz_box):
    return build_problem("graetz-steady", 0.2, graetz_box)


@pytest.fixture(scope="session")
def square_steady(square_box):
    return build_problem("square-steady", 0.2, square_box)


@pytest.fixture(scope="session")
def square_parabolic(square_box):
    return build_problem("square-parabolic", 0.25, square_box, n_steps=4, final_time=3.0)


@pytest.fixture(scope="session")
def graetz_parabolic():
    box = BetaParameterBox((1.0, 1.0), (1e5, 3.0), (5.0, 5.0), (3.0, 3.0))
    return build_problem("graetz-parabolic", 0.25, box, n_steps=4, final_time=3.0)
