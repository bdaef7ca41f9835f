import numpy as np
import pytest

ACCEPTANCE_LINES = []


def report(criterion, passed, detail=""):
    """Record one acceptance line; printed in the terminal summary."""
    line = f"ACCEPTANCE [{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def desk_data(tmp_path_factory):
    """The default synthetic dataset: 3 classes x 500 images at 32x32, seed 0."""
    from signgan.data import make_synthetic_dataset
    return make_synthetic_dataset(str(tmp_path_factory.mktemp("desk") / "data"), seed=0)
