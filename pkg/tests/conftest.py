import numpy as np
import pytest

from tacs import ScoreModel, TimePredConfig, TrainConfig, generate_sphere_dataset, toy_schedule, train_score
from tacs.timepred import train_time_predictor


@pytest.fixture(scope="session")
def sched():
    return toy_schedule(100)


@pytest.fixture(scope="session")
def sphere_small():
    return generate_sphere_dataset(600, np.random.default_rng(11))


@pytest.fixture(scope="session")
def small_model(sched, sphere_small):
    """A quickly trained score net; good enough for plumbing tests, not for quality."""
    m = ScoreModel.create(3, 3, sched.T, np.random.default_rng(0), hidden=(48, 48), activation="tanh")
    m, _ = train_score(m, sphere_small.points, TrainConfig(epochs=15, batch_size=64, lr=2e-3), sched)
    return m


@pytest.fixture(scope="session")
def small_cond_model(sched, sphere_small):
    c = sphere_small.labels[:, None]
    m = ScoreModel.create(3, 3, sched.T, np.random.default_rng(1), hidden=(48, 48), conditional=True,
                          cond_shift=c.mean(0), cond_scale=c.std(0))
    m, _ = train_score(m, sphere_small.points, TrainConfig(epochs=5, batch_size=64, lr=2e-3), sched,
                       conditions=c)
    return m


@pytest.fixture(scope="session")
def small_tp(sched, sphere_small):
    tp, _ = train_time_predictor(sphere_small.points, sched,
                                 TimePredConfig(epochs=3, batch_size=128, hidden=(32,), repeats=1))
    return tp


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
