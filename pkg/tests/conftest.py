import numpy as np
import pytest


def random_spd(rng, T, floor=0.5):
    A = rng.standard_normal((T, T))
    return A @ A.T / T + floor * np.eye(T)


def central_diff(f, x, h=1e-5):
    """Entrywise central differences of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=float)
    grad = np.empty_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f(x)
        x[idx] = old - h
        fm = f(x)
        x[idx] = old
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def max_rel_err(a, b, floor=1e-8):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = np.maximum(np.max(np.abs(b)), floor)
    return float(np.max(np.abs(a - b)) / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(20260101)
