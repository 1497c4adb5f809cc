import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose

from fourfield.material import (
    ConstitutiveDomainError,
    NeoHookean,
    body_force,
    cofactor,
    determinant,
    elasticity_apply,
    exact_cube,
    exact_square,
    first_pk,
    incompressibility_linearization,
    incompressibility_residual,
    pressure_linearization,
)

MAT = NeoHookean(1.3)
small_tensors = st.integers(2, 3).flatmap(
    lambda d: arrays(np.float64, (d, d), elements=st.floats(-0.3, 0.3))
)


def test_stress_free_reference():
    K = np.zeros((2, 2))
    assert_allclose(first_pk(MAT, K, MAT.mu), 0.0, atol=1e-15)
    assert_allclose(first_pk(MAT, K, 0.0), MAT.mu * np.eye(2))


def test_simple_shear_stress():
    K = np.array([[0.0, 0.4], [0.0, 0.0]])
    P = first_pk(MAT, K, 0.7)
    F = np.eye(2) + K
    assert_allclose(P, MAT.mu * F - 0.7 * np.linalg.inv(F).T, atol=1e-15)
    assert_allclose(incompressibility_residual(K), 0.0, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(small_tensors)
def test_cofactor_and_determinant_match_linalg(K):
    F = np.eye(len(K)) + K
    assert_allclose(determinant(F), np.linalg.det(F), rtol=1e-12)
    assert_allclose(cofactor(F), np.linalg.det(F) * np.linalg.inv(F).T, atol=1e-12)


def test_inverted_deformation_rejected():
    with pytest.raises(ConstitutiveDomainError):
        first_pk(MAT, np.diag([-1.5, 0.0]), 0.0)
    with pytest.raises(ValueError):
        NeoHookean(0.0)


@settings(max_examples=50, deadline=None)
@given(small_tensors, st.floats(-2, 2), st.integers(0, 2**31 - 1))
def test_linearizations_match_central_differences(K, p, seed):
    M = np.random.default_rng(seed).standard_normal(K.shape)
    h = 1e-6
    dP = elasticity_apply(MAT, K, M) + pressure_linearization(K, p, M)
    fd = (first_pk(MAT, K + h * M, p) - first_pk(MAT, K - h * M, p)) / (2 * h)
    assert_allclose(dP, fd, atol=1e-7)
    ddet = incompressibility_linearization(K, M)
    fd = (incompressibility_residual(K + h * M) - incompressibility_residual(K - h * M)) / (2 * h)
    assert_allclose(ddet, fd, atol=1e-8)


def test_stress_taylor_remainder_is_second_order():
    rng = np.random.default_rng(4)
    K, M = 0.2 * rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
    p = 0.8
    dP = elasticity_apply(MAT, K, M) + pressure_linearization(K, p, M)
    hs = np.array([1e-2, 5e-3, 2.5e-3])
    errs = [np.linalg.norm(first_pk(MAT, K + h * M, p) - first_pk(MAT, K, p) - h * dP) for h in hs]
    assert abs(np.polyfit(np.log(hs), np.log(errs), 1)[0] - 2.0) < 0.2


def test_elasticity_tensor_is_mu_identity():
    A = MAT.elasticity(np.zeros((3, 3)))
    M = np.random.default_rng(0).standard_normal((3, 3))
    assert_allclose(np.einsum("rJsS,sS->rJ", A, M), MAT.mu * M)


@pytest.mark.parametrize("exact", [exact_square(), exact_cube()], ids=["square", "cube"])
def test_exact_solutions_are_isochoric(exact):
    X = np.random.default_rng(1).random((100, exact.dim))
    F = np.eye(exact.dim) + exact.gradU(X)
    assert_allclose(determinant(F), 1.0, atol=1e-14)


@pytest.mark.parametrize("exact", [exact_square(), exact_cube()], ids=["square", "cube"])
def test_body_force_balances_divergence_of_stress(exact):
    """B = -div P_e checked against central differences of the analytic stress."""
    mat = NeoHookean(1.0)
    X = np.random.default_rng(2).random((20, exact.dim)) * 0.8 + 0.1
    h = 1e-5
    div = np.zeros_like(X)
    for j in range(exact.dim):
        e = np.zeros(exact.dim)
        e[j] = h
        div += (exact.P(mat, X + e)[:, :, j] - exact.P(mat, X - e)[:, :, j]) / (2 * h)
    assert_allclose(body_force(mat, exact)(X), -div, atol=1e-8)


def test_exact_gradient_matches_difference_quotient():
    exact = exact_square()
    X = np.array([[0.3, 0.6]])
    h = 1e-6
    dU = (exact.U(X + [0, h]) - exact.U(X - [0, h])) / (2 * h)
    assert_allclose(exact.gradU(X)[0, :, 1], dU[0], atol=1e-9)
    dp = (exact.p(X + [0, h]) - exact.p(X - [0, h])) / (2 * h)
    assert_allclose(exact.gradp(X)[0, 1], dp[0], atol=1e-9)
