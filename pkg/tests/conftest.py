import numpy as np
import pytest

from pwkd.data import Dataset, load_mnist, write_mnist5k


def make_blobs(n_train=96, n_test=48, classes=4, side=8, channels=1, seed=0):
    """Separable toy images: each class lights up one quadrant."""
    rng = np.random.default_rng(seed)

    def draw(n):
        y = np.arange(n) % classes
        x = rng.normal(0, 0.3, size=(n, channels, side, side)).astype(np.float32)
        h = side // 2
        for c in range(classes):
            r, q = divmod(c % 4, 2)
            x[y == c, :, r * h:(r + 1) * h, q * h:(q + 1) * h] += 1.5
        return x, y.astype(np.int64)

    xtr, ytr = draw(n_train)
    xte, yte = draw(n_test)
    return Dataset("blobs", xtr, ytr, xte, yte, np.zeros(channels, np.float32), np.ones(channels, np.float32))


@pytest.fixture
def blobs():
    return make_blobs()


@pytest.fixture(scope="session")
def mnist_dir(tmp_path_factory):
    return write_mnist5k(tmp_path_factory.mktemp("mnist5k"))


@pytest.fixture(scope="session")
def mnist(mnist_dir):
    return load_mnist(mnist_dir)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
