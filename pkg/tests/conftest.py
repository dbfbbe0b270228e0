import numpy as np
import pytest


def rel_err(approx, exact, floor=1e-6):
    """Elementwise relative error with a floor so near-zero entries compare
    on the finite-difference noise scale instead of blowing up."""
    approx = np.asarray(approx, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(approx), np.abs(exact)), floor)
    return np.abs(approx - exact) / denom


def unit_columns(gen, d, n):
    Z = gen.standard_normal((d, n))
    return Z / np.linalg.norm(Z, axis=0)


def random_orthogonal(gen, d):
    Q, R = np.linalg.qr(gen.standard_normal((d, d)))
    return Q * np.sign(np.diag(R))


@pytest.fixture
def gen():
    return np.random.default_rng(20240817)
