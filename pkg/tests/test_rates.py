import math

import numpy as np
import pytest

from conftest import rel_err, random_orthogonal, unit_columns
from ratecluster.errors import ValidationError
from ratecluster.rates import (
    RateConfig,
    coding_length,
    compressed_grads,
    rate,
    rate_compressed,
    rate_grad,
    rate_reduction,
)
from ratecluster.synthetic import gen_doubly_stochastic

CFG = RateConfig(eps_sq=0.1)


def central_diff(f, X, h=1e-6):
    """Dense central-difference gradient; the oracle for every analytic grad."""
    g = np.zeros_like(X)
    it = np.nditer(X, flags=["multi_index"])
    for _ in it:
        ix = it.multi_index
        Xp, Xm = X.copy(), X.copy()
        Xp[ix] += h
        Xm[ix] -= h
        g[ix] = (f(Xp) - f(Xm)) / (2 * h)
    return g


def test_rate_zero_matrix():
    assert rate(np.zeros((4, 7)), CFG) == 0.0
    assert rate(np.zeros((1, 1)), CFG) == 0.0


def test_rate_identity_closed_form():
    # d=2, n=2, Z=I, eps^2=0.5: logdet(I + 2 I) = 2 ln 3
    val = rate(np.eye(2), RateConfig(eps_sq=0.5))
    assert abs(val - 2 * math.log(3)) < 1e-12


def test_coding_length_scales_rate():
    cfg = RateConfig(eps_sq=0.5)
    assert abs(coding_length(np.eye(2), cfg) - 4 * 2 * math.log(3)) < 1e-12
    assert coding_length(np.zeros((3, 5)), CFG) == 0.0


def test_coding_length_direct_formula(gen):
    Z = unit_columns(gen, 6, 11)
    d, n = Z.shape
    c = d / (n * CFG.eps_sq)
    sign, logdet = np.linalg.slogdet(np.eye(d) + c * Z @ Z.T)
    assert sign > 0
    assert abs(coding_length(Z, CFG) - (n + d) * logdet) < 1e-9
    # duplicating columns changes the value and still matches the formula
    Z2 = np.hstack([Z, Z])
    c2 = d / (2 * n * CFG.eps_sq)
    _, logdet2 = np.linalg.slogdet(np.eye(d) + c2 * Z2 @ Z2.T)
    assert abs(coding_length(Z2, CFG) - (2 * n + d) * logdet2) < 1e-9


def test_rate_orthogonal_invariance(gen):
    for _ in range(20):
        Z = gen.standard_normal((8, 32))
        U = random_orthogonal(gen, 8)
        assert abs(rate(U @ Z, CFG) - rate(Z, CFG)) < 1e-9


def test_rate_positive_unless_zero(gen):
    Z = gen.standard_normal((3, 5)) * 0.01
    assert rate(Z, CFG) > 0


def test_rate_wide_and_tall_sides_agree(gen):
    # d > n path evaluates the n x n Gram side; compare against direct logdet
    Z = gen.standard_normal((10, 3))
    c = 10 / (3 * CFG.eps_sq)
    _, expected = np.linalg.slogdet(np.eye(10) + c * Z @ Z.T)
    assert abs(rate(Z, CFG) - expected) < 1e-9


def test_rate_rejects_nonfinite():
    Z = np.ones((2, 2))
    Z[0, 0] = np.inf
    with pytest.raises(ValidationError):
        rate(Z, CFG)


def test_rate_respects_feature_dim():
    cfg = RateConfig(eps_sq=0.1, feature_dim=3)
    with pytest.raises(ValidationError):
        rate(np.ones((2, 2)), cfg)


def test_compressed_uniform_membership_equals_rate(gen):
    for _ in range(20):
        n = int(gen.integers(2, 17))
        Z = unit_columns(gen, 8, n)
        Pi = np.full((n, n), 1.0 / n)
        assert abs(rate_compressed(Z, Pi, CFG) - rate(Z, CFG)) < 1e-9


def test_compressed_identity_membership_rank_one(gen):
    n = 6
    Z = unit_columns(gen, 4, n)
    val = rate_compressed(Z, np.eye(n), CFG)
    assert abs(val - math.log(1 + 4 / CFG.eps_sq)) < 1e-9


def test_rate_reduction_nonnegative_property(gen):
    for trial in range(100):
        n = int(gen.integers(2, 17))
        Z = unit_columns(gen, 8, n)
        Pi = gen_doubly_stochastic(n, seed=trial)
        assert rate_reduction(Z, Pi, CFG) >= -1e-9


def test_rate_reduction_uniform_is_zero(gen):
    n = 9
    Z = unit_columns(gen, 5, n)
    assert abs(rate_reduction(Z, np.full((n, n), 1 / n), CFG)) < 1e-9


def test_rate_reduction_identity_orthonormal_positive():
    # two orthonormal directions, each repeated: identity membership separates them
    Z = np.array([[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0]])
    assert rate_reduction(Z, np.eye(4), CFG) > 0.1


def test_compressed_rejects_bad_membership(gen):
    Z = unit_columns(gen, 3, 4)
    with pytest.raises(ValidationError):
        rate_compressed(Z, np.full((4, 4), 0.5), CFG)  # sums are 2
    with pytest.raises(ValidationError):
        rate_compressed(Z, np.eye(3), CFG)  # shape mismatch


def test_rate_grad_zero_at_origin():
    assert np.array_equal(rate_grad(np.zeros((4, 6)), CFG), np.zeros((4, 6)))


def test_rate_grad_matches_finite_differences(gen):
    for _ in range(5):
        Z = gen.standard_normal((6, 10))
        g = rate_grad(Z, CFG)
        fd = central_diff(lambda W: rate(W, CFG), Z)
        assert rel_err(g, fd).max() < 1e-4


def test_rate_grad_orthogonal_equivariance(gen):
    Z = gen.standard_normal((8, 12))
    U = random_orthogonal(gen, 8)
    assert np.abs(rate_grad(U @ Z, CFG) - U @ rate_grad(Z, CFG)).max() < 1e-8


def test_rate_grad_wide_matrix(gen):
    Z = gen.standard_normal((9, 4))
    fd = central_diff(lambda W: rate(W, CFG), Z)
    assert rel_err(rate_grad(Z, CFG), fd).max() < 1e-4


def test_compressed_grads_match_finite_differences(gen):
    d, n = 5, 8
    Z = unit_columns(gen, d, n)
    Pi = gen_doubly_stochastic(n, seed=17)
    gZ, gPi = compressed_grads(Z, Pi, CFG)
    fdZ = central_diff(lambda W: rate_compressed(W, Pi, CFG), Z)
    assert rel_err(gZ, fdZ).max() < 1e-4
    fdPi = central_diff(lambda P: rate_compressed(Z, P, CFG), Pi)
    assert rel_err(gPi, fdPi).max() < 1e-4


def test_compressed_pi_grad_nonnegative(gen):
    Z = unit_columns(gen, 6, 10)
    Pi = gen_doubly_stochastic(10, seed=4)
    _, gPi = compressed_grads(Z, Pi, CFG)
    assert gPi.min() >= 0.0


def test_compressed_grads_zero_features():
    Z = np.zeros((4, 6))
    Pi = np.full((6, 6), 1 / 6)
    gZ, _ = compressed_grads(Z, Pi, CFG)
    assert np.array_equal(gZ, np.zeros_like(Z))
