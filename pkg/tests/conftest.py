import numpy as np
import pytest

from draw import dataio


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def mnist_dir():
    path = dataio.default_data_dir()
    if not (path / dataio.FILES["train"][0]).exists():
        pytest.skip(f"MNIST not prepared in {path}; run `draw prepare-data`")
    return path


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
