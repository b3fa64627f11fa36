import itertools
import pathlib

import numpy as np
import pytest


def rel_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.abs(a) + np.abs(b), 1e-12)
    return float(np.max(np.abs(a - b) / denom))


def random_posterior_rows(rng, T, K, floor=0.05):
    """Row-stochastic T x K matrix bounded away from zero."""
    raw = rng.dirichlet(np.ones(K), size=T)
    rows = (1.0 - floor * K) * raw + floor
    return rows / rows.sum(axis=1, keepdims=True)


def enumerate_marginal(values, target, blank):
    """Independent oracle: sum of products over every path that collapses
    to `target`. Works on raw arrays so rows need not be normalised,
    which lets finite differences perturb single entries."""
    values = np.asarray(values, dtype=np.float64)
    T, K = values.shape
    target = tuple(target)
    total = 0.0
    for path in itertools.product(range(K), repeat=T):
        out = []
        prev = -1
        for s in path:
            if s != prev and s != blank:
                out.append(s)
            prev = s
        if tuple(out) != target:
            continue
        p = 1.0
        for t, s in enumerate(path):
            p *= values[t, s]
        total += p
    return total


def central_difference(f, x, step=1e-4):
    """Dense central-difference gradient of scalar f at x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def random_feasible_label(rng, T, n_labels):
    """Label whose minimum frame requirement fits in T frames."""
    while True:
        length = int(rng.integers(0, T + 1))
        symbols = tuple(int(s) for s in rng.integers(0, n_labels, size=length))
        pairs = sum(1 for a, b in zip(symbols, symbols[1:]) if a == b)
        if length + pairs <= T:
            return symbols


@pytest.fixture
def rng():
    return np.random.default_rng(20260814)


@pytest.fixture
def datadir():
    return pathlib.Path(__file__).parent / "data"
