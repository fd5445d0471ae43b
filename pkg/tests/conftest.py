import numpy as np
import pytest


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def fd_complex(f, X, h=1e-6):
    """Central differences of a real f over (Re X, Im X), packed as dRe + 1j dIm."""
    X = np.asarray(X, dtype=np.complex128)
    g = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        for unit in (1.0, 1j):
            E = np.zeros_like(X)
            E[idx] = unit * h
            d = (f(X + E) - f(X - E)) / (2 * h)
            g[idx] += d * unit
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
