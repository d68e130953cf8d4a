import numpy as np
import pytest

from shufflefl.datasets import DATA_DIR


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def mnist_available():
    if not (DATA_DIR / "train-images-idx3-ubyte.gz").exists():
        pytest.skip("MNIST subset not present")
    return True
