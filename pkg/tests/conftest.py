import numpy as np
import pytest

from fairsample.data import Dataset
from fairsample.model import ModelState, init_model, num_params

# PASS/FAIL lines from the acceptance suite, echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def linear_model(W, b):
    """Single-layer softmax model with the given weights and bias."""
    W = np.asarray(W, dtype=float)
    return ModelState(np.concatenate([W.ravel(), np.asarray(b, dtype=float)]), W.shape)


def zero_model(sizes):
    return ModelState(np.zeros(num_params(sizes)), tuple(sizes))


def central_difference(f, params, coords, h=1e-5):
    out = []
    for c in coords:
        up, down = params.copy(), params.copy()
        up[c] += h
        down[c] -= h
        out.append((f(up) - f(down)) / (2 * h))
    return np.array(out)


def random_grouped(n, d, seed, K=2, A=2):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    labels = np.tile(np.arange(K), n // K + 1)[:n]
    groups = np.repeat(np.arange(A), n // A + 1)[:n]
    return Dataset(X, rng.permutation(labels), rng.permutation(groups), K, A, "rand")


def separable_2d(n=200, seed=0, margin=0.5):
    """Two classes split by the line x0 + x1 = 0, with a margin gap."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(-3, 3, size=(4 * n, 2))
    s = X.sum(axis=1)
    X = X[np.abs(s) > margin][:n]
    y = (X.sum(axis=1) > 0).astype(int)
    return X, y


@pytest.fixture
def small_model():
    return init_model((4, 6, 2), seed=3)
