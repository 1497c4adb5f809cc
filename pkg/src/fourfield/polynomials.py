"""Monomial bookkeeping for small-degree polynomials on simplices."""

from __future__ import annotations

from functools import lru_cache
from itertools import product

import numpy as np


@lru_cache(maxsize=None)
def exponents(dim: int, degree: int) -> np.ndarray:
    """All multi-indices with total degree <= ``degree``, graded order."""
    out = [a for d in range(degree + 1) for a in product(range(d + 1), repeat=dim) if sum(a) == d]
    out.sort(key=lambda a: (sum(a), tuple(-x for x in a)))
    arr = np.array(out, dtype=int).reshape(-1, dim)
    arr.setflags(write=False)
    return arr


def tabulate_monomials(expo: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Monomial values, shape (nmono, npts)."""
    points = np.atleast_2d(points)
    return np.prod(points[None, :, :] ** expo[:, None, :], axis=2)


def tabulate_monomial_grads(expo: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Monomial gradients, shape (nmono, npts, dim)."""
    points = np.atleast_2d(points)
    dim = expo.shape[1]
    out = np.zeros((len(expo), len(points), dim))
    for j in range(dim):
        e = expo.copy()
        coef = e[:, j].astype(float)
        e[:, j] = np.maximum(e[:, j] - 1, 0)
        out[:, :, j] = coef[:, None] * tabulate_monomials(e, points)
    return out


def homogeneous_mask(expo: np.ndarray, degree: int) -> np.ndarray:
    return expo.sum(axis=1) == degree


def multiply_by_coordinate(coeffs: np.ndarray, expo: np.ndarray, axis: int) -> np.ndarray:
    """Coefficients of x_axis * p for p given in the monomial basis ``expo``.

    The product must stay inside the span of ``expo``.
    """
    lookup = {tuple(a): i for i, a in enumerate(expo.tolist())}
    out = np.zeros_like(coeffs)
    for i, a in enumerate(expo.tolist()):
        b = list(a)
        b[axis] += 1
        if np.any(coeffs[..., i] != 0):
            out[..., lookup[tuple(b)]] += coeffs[..., i]
    return out
