import numpy as np
import pytest

from fcltlab import config, report
from fcltlab.chain_model import (
    build_birth_death,
    build_cycle,
    build_random_reversible,
    build_two_state,
    center,
)


@pytest.fixture
def two_state():
    return build_two_state(1.0, 1.0)


@pytest.fixture
def parity(two_state):
    return center([1.0, -1.0], two_state)


@pytest.fixture
def three_state():
    """Unit-rate birth-death chain on {0, 1, 2}; eigenvalues 0, -1, -3."""
    return build_birth_death([1.0, 1.0], [1.0, 1.0])


@pytest.fixture
def tilt(three_state):
    """f = (1, 0, -1): an eigenvector with decay rate 1, sigma^2 = 4/3."""
    return center([1.0, 0.0, -1.0], three_state)


@pytest.fixture
def cycle3():
    return build_cycle(3)


@pytest.fixture
def random_model():
    return build_random_reversible(12, connectivity=0.4, seed=7)


@pytest.fixture
def random_f(random_model):
    return center(np.random.default_rng(3).standard_normal(random_model.m), random_model)


@pytest.fixture(autouse=True)
def isolated_state(tmp_path, monkeypatch):
    """Keep history writes and tolerance overrides out of the user's environment."""
    history_dir = tmp_path / "history"
    monkeypatch.setattr(report, "_HISTORY_DIR", history_dir)
    monkeypatch.setattr(report, "_HISTORY_FILE", history_dir / "history.log")
    yield
    config.override_tolerance(None)
