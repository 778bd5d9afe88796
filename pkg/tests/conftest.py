import numpy as np
import pytest

from entropic.data import generate_sample
from entropic.model import discretize_continuous, normalize


@pytest.fixture
def dn_general():
    """dn(0.7, 0.3) on {-5..5}, general form, infinite-sample frequencies."""
    support, pots = discretize_continuous("dnorm_general", {"lo": -5, "hi": 5, "m": 11})
    sample = generate_sample(normalize(support, pots, [0.7], [0.3]), 0, 0)
    return support, pots, sample


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from tests.test_acceptance import VERDICTS

    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])
