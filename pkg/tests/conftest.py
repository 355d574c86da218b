import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import settings

from temporal_wavelets.temporal_graph import TemporalNetwork

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def make_network(layers, n=None):
    layers = [sp.csr_matrix(np.asarray(a, dtype=float)) for a in layers]
    return TemporalNetwork(n or layers[0].shape[0], layers)


def complete(n):
    return np.ones((n, n)) - np.eye(n)


def path(n):
    a = np.zeros((n, n))
    for i in range(n - 1):
        a[i, i + 1] = a[i + 1, i] = 1
    return a


def random_connected(n, p, rng):
    """Erdos-Renyi layer with a spanning path added so it is connected."""
    a = np.triu(rng.random((n, n)) < p, 1).astype(float)
    perm = rng.permutation(n)
    for u, v in zip(perm[:-1], perm[1:]):
        a[min(u, v), max(u, v)] = 1
    return a + a.T


def random_graph(n, p, rng):
    a = np.triu(rng.random((n, n)) < p, 1).astype(float)
    return a + a.T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get("test_acceptance")
    verdicts = getattr(module, "VERDICTS", None)
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for line in sorted(verdicts, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
