import numpy as np
import pytest

from specwalk import gait_net, spectral
from specwalk.dynamics import default_model


@pytest.fixture(scope="session")
def model():
    return default_model()


@pytest.fixture(scope="session")
def small_corpus():
    return spectral.build_cycle_corpus(spectral.synthesize_dataset(3, 0))


@pytest.fixture(scope="session")
def cycle(small_corpus):
    return small_corpus[0]


@pytest.fixture(scope="session")
def small_gait(small_corpus):
    cfg = gait_net.TrainConfig(learning_rate=1e-3, batch_size=32, max_epochs=40, patience=40,
                               seed=0, hidden=(64,))
    return gait_net.train(small_corpus, cfg).params


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
