import numpy as np
import pytest

from advpol import make_env


@pytest.fixture(scope="session")
def rps():
    return make_env("markov_rps")


@pytest.fixture(scope="session")
def grid():
    return make_env("grid_pass")


@pytest.fixture(scope="session")
def duel():
    return make_env("push_duel")


@pytest.fixture
def rng():
    return np.random.default_rng(20260816)


def pytest_addoption(parser):
    parser.addoption(
        "--skip-slow", action="store_true", default=False,
        help="skip the long acceptance checks",
    )


def pytest_collection_modifyitems(config, items):
    if not config.getoption("--skip-slow"):
        return
    marker = pytest.mark.skip(reason="--skip-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(marker)
