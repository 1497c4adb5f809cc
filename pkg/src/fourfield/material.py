"""Incompressible Neo-Hookean law, its linearizations, and manufactured solutions.

All tensor functions broadcast over leading axes: ``K`` has shape
(..., d, d) and ``p`` has shape (...), so the same code runs on a single
tensor or on every quadrature point of a mesh at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class ConstitutiveDomainError(ValueError):
    """Deformation gradient I + K is singular or inverted."""


@dataclass(frozen=True)
class NeoHookean:
    mu: float = 1.0

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"shear modulus must be positive, got {self.mu}")

    def elasticity(self, K: np.ndarray) -> np.ndarray:
        """Fourth-order tensor A[r, J, s, S] with A(K):M = A[r,J,s,S] M[s,S]."""
        d = np.shape(K)[-1]
        eye = np.eye(d)
        A = self.mu * np.einsum("rs,JS->rJsS", eye, eye)
        return np.broadcast_to(A, np.shape(K)[:-2] + A.shape)


def cofactor(F: np.ndarray) -> np.ndarray:
    """Cofactor matrix det(F) F^{-T} of 2x2 or 3x3 matrices.

    Written out explicitly so it works in any floating dtype, including
    extended precision, which LAPACK-backed routines do not support.
    """
    d = F.shape[-1]
    if d == 2:
        return np.stack([np.stack([F[..., 1, 1], -F[..., 1, 0]], -1),
                         np.stack([-F[..., 0, 1], F[..., 0, 0]], -1)], -2)
    if d == 3:
        r0, r1, r2 = F[..., 0, :], F[..., 1, :], F[..., 2, :]
        return np.stack([np.cross(r1, r2), np.cross(r2, r0), np.cross(r0, r1)], -2)
    raise ValueError(f"unsupported dimension {d}")


def determinant(F: np.ndarray) -> np.ndarray:
    return np.einsum("...j,...j->...", F[..., 0, :], cofactor(F)[..., 0, :])


def _deformation(K: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """F = I + K, det F and F^{-T}, with a domain check."""
    K = np.asarray(K)
    if not np.issubdtype(K.dtype, np.floating):
        K = K.astype(float)
    F = K + np.eye(K.shape[-1], dtype=K.dtype)
    C = cofactor(F)
    det = np.einsum("...j,...j->...", F[..., 0, :], C[..., 0, :])
    if np.any(~np.isfinite(det)) or np.any(det <= 0.0):
        raise ConstitutiveDomainError("det(I + K) must be positive")
    return F, det, C / det[..., None, None]


def first_pk(mat: NeoHookean, K, p) -> np.ndarray:
    """First Piola-Kirchhoff stress mu F - p F^{-T}."""
    F, _, G = _deformation(K)
    return mat.mu * F - np.asarray(p, dtype=G.dtype)[..., None, None] * G


def elasticity_apply(mat, K, M) -> np.ndarray:
    """A(K):M for any material exposing ``elasticity``; mu M for Neo-Hookean."""
    if isinstance(mat, NeoHookean):
        return mat.mu * np.asarray(M, dtype=float)
    return np.einsum("...rJsS,...sS->...rJ", mat.elasticity(K), M)


def pressure_linearization(K, p, M) -> np.ndarray:
    """Derivative of -p (I+K)^{-T} in direction M: p G M^T G with G = (I+K)^{-T}."""
    _, _, G = _deformation(K)
    p = np.asarray(p, dtype=float)[..., None, None]
    return p * G @ np.swapaxes(np.asarray(M, dtype=float), -1, -2) @ G


def incompressibility_residual(K) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    return determinant(K + np.eye(K.shape[-1])) - 1.0


def incompressibility_linearization(K, M) -> np.ndarray:
    """det(I+K) tr[(I+K)^{-1} M], the derivative of det(I+K) along M."""
    _, det, G = _deformation(K)
    # tr(F^{-1} M) = sum_ij G_ij M_ij since G = F^{-T}
    return det * np.einsum("...ij,...ij->...", G, np.asarray(M, dtype=float))


# --------------------------------------------------------------------------
# manufactured solutions


@dataclass(frozen=True)
class ExactSolution:
    """Displacement U_e(X) = (a(Y), 0[, 0]) and pressure p_e(X) = b(Y), Y = X[..., 1].

    ``a`` and ``b`` come with their derivatives: ``a_derivs = (a, a', a'')``
    and ``b_derivs = (b, b')``.  Every field is a shear in the first
    direction, so det(I + grad U_e) = 1 identically.
    """

    dim: int
    a_derivs: tuple[Callable, Callable, Callable]
    b_derivs: tuple[Callable, Callable]

    def U(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.zeros_like(X)
        out[..., 0] = self.a_derivs[0](X[..., 1])
        return out

    def gradU(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.zeros(X.shape + (self.dim,))
        out[..., 0, 1] = self.a_derivs[1](X[..., 1])
        return out

    def hessU(self, X) -> np.ndarray:
        """Second derivatives H[..., a, b, c] = d^2 U_a / dX_b dX_c."""
        X = np.asarray(X, dtype=float)
        out = np.zeros(X.shape + (self.dim, self.dim))
        out[..., 0, 1, 1] = self.a_derivs[2](X[..., 1])
        return out

    def p(self, X) -> np.ndarray:
        return self.b_derivs[0](np.asarray(X, dtype=float)[..., 1])

    def gradp(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.zeros_like(X)
        out[..., 1] = self.b_derivs[1](X[..., 1])
        return out

    def P(self, mat: NeoHookean, X) -> np.ndarray:
        return first_pk(mat, self.gradU(X), self.p(X))


def _shear_profile(c: float):
    w = np.pi / 2
    return (
        lambda y: c * (y**3 + np.sin(w * y)),
        lambda y: c * (3 * y**2 + w * np.cos(w * y)),
        lambda y: c * (6 * y - w**2 * np.sin(w * y)),
    )


def _sine_pressure(c: float):
    w = np.pi / 2
    return (lambda y: c * np.sin(w * y), lambda y: c * w * np.cos(w * y))


def exact_square() -> ExactSolution:
    return ExactSolution(2, _shear_profile(0.5), _sine_pressure(1.0))


def exact_cube() -> ExactSolution:
    return ExactSolution(3, _shear_profile(0.25), _sine_pressure(0.5))


def zero_solution(dim: int, pressure: float = 0.0) -> ExactSolution:
    """U = 0 with constant pressure; useful for unloaded problems."""
    zero = lambda y: 0.0 * y  # noqa: E731
    return ExactSolution(dim, (zero, zero, zero), (lambda y: 0.0 * y + pressure, zero))


def body_force(mat: NeoHookean, exact: ExactSolution) -> Callable[[np.ndarray], np.ndarray]:
    """B = -div P_e for the Neo-Hookean stress of the exact fields.

    Uses d_j G = -G (d_j K)^T G for G = F^{-T}, so only the analytic first
    and second derivatives of U_e and the gradient of p_e are needed.
    """

    def B(X):
        K = exact.gradU(X)
        _, _, G = _deformation(K)
        H = exact.hessU(X)                     # dK_ab/dX_j = H[a, b, j]
        dK = np.moveaxis(H, -1, -3)            # (..., j, a, b)
        div_F = np.einsum("...ijj->...i", H)   # sum_j dK_ij/dX_j
        dG = -np.einsum("...ab,...jcb,...cd->...jad", G, dK, G)
        p = exact.p(X)[..., None]
        div_pG = np.einsum("...j,...ij->...i", exact.gradp(X), G) + p * np.einsum("...jij->...i", dG)
        return -(mat.mu * div_F - div_pG)

    return B
