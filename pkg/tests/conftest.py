import numpy as np
import pytest

from eqdetect.dataset import Dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_data(X, y, names=None):
    X = np.asarray(X, dtype=float)
    return Dataset(X, y, names or tuple(f"x{i}" for i in range(X.shape[1])))
