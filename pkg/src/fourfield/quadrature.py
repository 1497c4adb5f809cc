"""Gauss-type quadrature on the reference interval and simplices.

Simplex rules are collapsed (Stroud conical product) rules built from
Gauss-Jacobi points, so exactness holds for any requested degree; the
reference triangle is {x, y >= 0, x + y <= 1} and likewise in 3D.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np
from scipy.special import roots_jacobi

MAX_DEGREE = 8


class QuadratureError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    points: np.ndarray   # (npts, dim)
    weights: np.ndarray  # (npts,)
    degree: int

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def _gauss_jacobi01(n: int, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """n-point rule on [0, 1] for the weight (1 - s)**alpha."""
    x, w = roots_jacobi(n, alpha, 0.0)
    return (x + 1.0) / 2.0, w / 2.0 ** (alpha + 1.0)


@lru_cache(maxsize=None)
def simplex_rule(dim: int, degree: int) -> QuadratureRule:
    """Rule on the reference ``dim``-simplex exact for polynomials of ``degree``."""
    if dim not in (1, 2, 3):
        raise QuadratureError(f"no simplex rules in dimension {dim}")
    if not 0 <= degree <= MAX_DEGREE:
        raise QuadratureError(f"degree {degree} outside supported range 0..{MAX_DEGREE}")
    n = max(1, (degree + 2) // 2)
    s0, w0 = _gauss_jacobi01(n, 0.0)
    if dim == 1:
        pts, wts = s0[:, None], w0
    elif dim == 2:
        s1, w1 = _gauss_jacobi01(n, 1.0)
        t, y = np.meshgrid(s0, s1, indexing="ij")
        pts = np.column_stack([(t * (1.0 - y)).ravel(), y.ravel()])
        wts = np.outer(w0, w1).ravel()
    else:
        s1, w1 = _gauss_jacobi01(n, 1.0)
        s2, w2 = _gauss_jacobi01(n, 2.0)
        t, u, z = np.meshgrid(s0, s1, s2, indexing="ij")
        y = u * (1.0 - z)
        x = t * (1.0 - u) * (1.0 - z)
        pts = np.column_stack([x.ravel(), y.ravel(), z.ravel()])
        wts = (w0[:, None, None] * w1[None, :, None] * w2[None, None, :]).ravel()
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(pts, wts, degree)


def monomial_integral(exponents) -> float:
    """Exact integral of prod x_i**a_i over the reference simplex."""
    exponents = tuple(int(a) for a in exponents)
    num = np.prod([factorial(a) for a in exponents])
    return float(num / factorial(sum(exponents) + len(exponents)))
