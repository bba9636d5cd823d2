import numpy as np
import pytest

from cpfknockoff.data import ContinuousOutcome, Dataset, FeatureMatrix


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def continuous_dataset(x, y, names=None):
    return Dataset(FeatureMatrix.from_array(x, names), ContinuousOutcome(y))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
