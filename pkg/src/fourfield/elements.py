"""Reference simplicial elements L1-L2, D0-D2, N11-N22, R1-R2, B1-B2.

Each element is a polynomial space plus a list of DOF functionals.  The
nodal basis comes from inverting the generalized Vandermonde matrix of the
functionals against an orthonormalized spanning set of the space.

Facet functionals are integrals over the sub-entity parametrized from its
lowest local vertex (``x(s) = v_a + s (v_b - v_a)`` on an edge, two edge
vectors on a face) with un-normalized tangents/normals.  Under the matching
Piola map these functionals are intrinsic to the physical entity, so two
cells sharing it (both listing vertices in ascending global order) agree on
every shared DOF.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np

from . import polynomials as poly
from .mesh import local_edges, local_faces
from .quadrature import simplex_rule


class UnsupportedElementError(ValueError):
    pass


class GeometryError(ValueError):
    pass


class Family(enum.Enum):
    LAGRANGE = "L"
    DISCONTINUOUS = "D"
    NEDELEC1 = "N1"
    NEDELEC2 = "N2"
    RAVIART_THOMAS = "R"
    BDM = "B"


_CONFORMITY = {
    Family.LAGRANGE: "H1",
    Family.DISCONTINUOUS: "L2",
    Family.NEDELEC1: "Hcurl",
    Family.NEDELEC2: "Hcurl",
    Family.RAVIART_THOMAS: "Hdiv",
    Family.BDM: "Hdiv",
}
_TRANSFORM = {"H1": "affine", "L2": "affine", "Hcurl": "covariant", "Hdiv": "contravariant"}
_DEGREES = {
    Family.LAGRANGE: (1, 2),
    Family.DISCONTINUOUS: (0, 1, 2),
    Family.NEDELEC1: (1, 2),
    Family.NEDELEC2: (1, 2),
    Family.RAVIART_THOMAS: (1, 2),
    Family.BDM: (1, 2),
}


@dataclass(frozen=True)
class ElementFamily:
    family: Family
    degree: int

    def __post_init__(self):
        if self.degree not in _DEGREES[self.family]:
            raise UnsupportedElementError(f"{self.family.name} of degree {self.degree}")

    @property
    def conformity(self) -> str:
        return _CONFORMITY[self.family]

    @property
    def name(self) -> str:
        return f"{self.family.value}{self.degree}"

    @classmethod
    def parse(cls, name: str) -> "ElementFamily":
        m = re.fullmatch(r"(L|D|N1|N2|R|B)([0-2])", name)
        if not m:
            raise UnsupportedElementError(f"unknown element {name!r}")
        return cls(Family(m.group(1)), int(m.group(2)))

    def __str__(self) -> str:
        return self.name


# --------------------------------------------------------------------------
# reference geometry

def reference_vertices(dim: int) -> np.ndarray:
    return np.vstack([np.zeros(dim), np.eye(dim)])


def _legendre01(k: int, s: np.ndarray) -> np.ndarray:
    """Shifted Legendre polynomials of degree <= k on [0, 1], shape (k+1, npts)."""
    x = 2.0 * s - 1.0
    out = [np.ones_like(x), x, 1.5 * x**2 - 0.5]
    return np.array(out[: k + 1])


def _face_scalars(k: int, xi: np.ndarray) -> np.ndarray:
    """A basis of P_k on the reference triangle in face coordinates."""
    expo = poly.exponents(2, k)
    return poly.tabulate_monomials(expo, xi)


def _rot(v: np.ndarray) -> np.ndarray:
    return np.array([v[1], -v[0]])


# --------------------------------------------------------------------------
# polynomial spaces, as coefficient arrays of shape (nfun, ncomp, nmono)

def _vector_full(dim: int, k: int, expo: np.ndarray) -> np.ndarray:
    nmono = len(expo)
    keep = np.flatnonzero(expo.sum(axis=1) <= k)
    out = []
    for c in range(dim):
        for m in keep:
            f = np.zeros((dim, nmono))
            f[c, m] = 1.0
            out.append(f)
    return np.array(out)


def _raviart_thomas_span(dim: int, k: int, expo: np.ndarray) -> np.ndarray:
    cand = list(_vector_full(dim, k - 1, expo))
    for m in np.flatnonzero(poly.homogeneous_mask(expo, k - 1)):
        scal = np.zeros(len(expo))
        scal[m] = 1.0
        cand.append(np.array([poly.multiply_by_coordinate(scal, expo, i) for i in range(dim)]))
    return np.array(cand)


def _nedelec1_span(dim: int, k: int, expo: np.ndarray) -> np.ndarray:
    cand = list(_vector_full(dim, k - 1, expo))
    for m in np.flatnonzero(poly.homogeneous_mask(expo, k - 1)):
        scal = np.zeros(len(expo))
        scal[m] = 1.0
        xs = [poly.multiply_by_coordinate(scal, expo, i) for i in range(dim)]
        if dim == 2:
            cand.append(np.array([-xs[1], xs[0]]))
        else:
            zero = np.zeros(len(expo))
            # x cross e_j times the monomial
            cand.append(np.array([zero, xs[2], -xs[1]]))
            cand.append(np.array([-xs[2], zero, xs[0]]))
            cand.append(np.array([xs[1], -xs[0], zero]))
    return np.array(cand)


def _orthonormal_span(cand: np.ndarray) -> np.ndarray:
    flat = cand.reshape(len(cand), -1)
    _, s, vt = np.linalg.svd(flat, full_matrices=False)
    rank = int(np.sum(s > 1e-10 * s[0]))
    return vt[:rank].reshape((rank,) + cand.shape[1:])


# --------------------------------------------------------------------------
# DOF functionals: each is (points, weights) with ``weights`` of shape
# (npts, ncomp) so that ell(u) = sum_q weights[q] . u(points[q]).

_EDGE_RULE = simplex_rule(1, 6)
_FACE_RULE = simplex_rule(2, 6)


def _edge_functionals(dim, a, b, k, kind):
    V = reference_vertices(dim)
    t = V[b] - V[a]
    s = _EDGE_RULE.points[:, 0]
    pts = V[a] + s[:, None] * t
    vec = t if kind == "tangent" else _rot(t)
    return [(pts, (_EDGE_RULE.weights * q)[:, None] * vec) for q in _legendre01(k, s)]


def _face_geometry(a, b, c):
    V = reference_vertices(3)
    t1, t2 = V[b] - V[a], V[c] - V[a]
    xi = _FACE_RULE.points
    pts = V[a] + xi[:, :1] * t1 + xi[:, 1:] * t2
    return pts, t1, t2, xi


def _face_normal_functionals(a, b, c, k):
    pts, t1, t2, xi = _face_geometry(a, b, c)
    n = np.cross(t1, t2)
    return [(pts, (_FACE_RULE.weights * q)[:, None] * n) for q in _face_scalars(k, xi)]


def _face_tangent_functionals(a, b, c, kind):
    pts, t1, t2, xi = _face_geometry(a, b, c)
    w = _FACE_RULE.weights
    fields = [np.ones_like(xi) * [1.0, 0.0], np.ones_like(xi) * [0.0, 1.0]]
    if kind == "rt1":
        fields.append(xi)
    out = []
    for q in fields:
        vec = q[:, :1] * t1 + q[:, 1:] * t2
        out.append((pts, w[:, None] * vec))
    return out


def _interior_functionals(dim, kind):
    rule = simplex_rule(dim, 6)
    x, w = rule.points, rule.weights
    fields = [np.tile(e, (len(x), 1)) for e in np.eye(dim)]
    if kind == "rt1":
        fields.append(x.copy())
    elif kind == "ned1":
        if dim == 2:
            fields.append(np.column_stack([-x[:, 1], x[:, 0]]))
        else:
            fields.extend(np.cross(x, e) for e in np.eye(3))
    return [(x, w[:, None] * q) for q in fields]


def _lattice(dim: int, k: int) -> np.ndarray:
    if k == 0:
        return np.full((1, dim), 1.0 / (dim + 1))
    pts = [a for a in product(range(k + 1), repeat=dim) if sum(a) <= k]
    pts.sort(key=lambda a: (sum(a), tuple(-x for x in a)))
    return np.array(pts, dtype=float) / k


def _point_eval(x):
    return (np.atleast_2d(x), np.ones((1, 1)))


@dataclass(frozen=True, eq=False)
class ReferenceElement:
    family: ElementFamily
    dim: int
    coeffs: np.ndarray        # nodal basis, (nbasis, ncomp, nmono)
    exponents: np.ndarray
    functionals: tuple        # per DOF: (points, weights)
    entity_dofs: dict         # (entity_dim, local_index) -> tuple of local DOFs
    transform: str

    @property
    def conformity(self) -> str:
        return self.family.conformity

    @property
    def ncomp(self) -> int:
        return self.coeffs.shape[1]

    @property
    def nbasis(self) -> int:
        return self.coeffs.shape[0]

    @property
    def degree(self) -> int:
        return int(self.exponents.sum(axis=1).max()) if len(self.exponents) else 0

    def dofs_per_entity(self, entity_dim: int) -> int:
        counts = {len(v) for (d, _), v in self.entity_dofs.items() if d == entity_dim}
        return counts.pop() if counts else 0

    def dual_matrix(self, coeffs: np.ndarray | None = None) -> np.ndarray:
        """Matrix [ell_i(p_j)] of the functionals applied to ``coeffs`` (default: own basis)."""
        coeffs = self.coeffs if coeffs is None else coeffs
        out = np.empty((len(self.functionals), len(coeffs)))
        for i, (pts, wts) in enumerate(self.functionals):
            mono = poly.tabulate_monomials(self.exponents, pts)
            vals = np.einsum("fcm,mp->fpc", coeffs, mono)
            out[i] = np.einsum("fpc,pc->f", vals, wts)
        return out


def _build(fam: ElementFamily, dim: int) -> ReferenceElement:
    F, k = fam.family, fam.degree
    expo = poly.exponents(dim, max(k, 0))
    edges, faces = local_edges(dim), local_faces(dim)
    V = reference_vertices(dim)
    func: list = []
    ent: dict = {}

    def add(key, items):
        start = len(func)
        func.extend(items)
        ent[key] = tuple(range(start, len(func)))

    if F in (Family.LAGRANGE, Family.DISCONTINUOUS):
        cand = np.eye(len(expo))[:, None, :][np.flatnonzero(expo.sum(axis=1) <= k)]
        if F is Family.LAGRANGE:
            for i, v in enumerate(V):
                add((0, i), [_point_eval(v)])
            if k == 2:
                for i, (a, b) in enumerate(edges):
                    add((1, i), [_point_eval((V[a] + V[b]) / 2)])
        else:
            add((dim, 0), [_point_eval(x) for x in _lattice(dim, k)])
    elif F is Family.NEDELEC1:
        cand = _nedelec1_span(dim, k, expo)
        for i, (a, b) in enumerate(edges):
            add((1, i), _edge_functionals(dim, a, b, k - 1, "tangent"))
        if k == 2:
            for i, f in enumerate(faces):
                add((2, i), _face_tangent_functionals(*f, "const"))
            if dim == 2:
                add((2, 0), _interior_functionals(dim, "const"))
    elif F is Family.NEDELEC2:
        cand = _vector_full(dim, k, expo)
        for i, (a, b) in enumerate(edges):
            add((1, i), _edge_functionals(dim, a, b, k, "tangent"))
        if k == 2:
            for i, f in enumerate(faces):
                add((2, i), _face_tangent_functionals(*f, "rt1"))
            if dim == 2:
                add((2, 0), _interior_functionals(dim, "rt1"))
    elif F in (Family.RAVIART_THOMAS, Family.BDM):
        rt = F is Family.RAVIART_THOMAS
        cand = _raviart_thomas_span(dim, k, expo) if rt else _vector_full(dim, k, expo)
        qdeg = k - 1 if rt else k
        if dim == 2:
            for i, (a, b) in enumerate(edges):
                add((1, i), _edge_functionals(dim, a, b, qdeg, "normal"))
        else:
            for i, f in enumerate(faces):
                add((2, i), _face_normal_functionals(*f, qdeg))
        if k == 2:
            add((dim, 0), _interior_functionals(dim, "const" if rt else "ned1"))
    else:  # pragma: no cover
        raise UnsupportedElementError(fam.name)

    span = _orthonormal_span(cand)
    if len(span) != len(func):
        raise UnsupportedElementError(f"{fam.name} in {dim}D: {len(span)} polynomials vs {len(func)} DOFs")
    elem = ReferenceElement(fam, dim, span, expo, tuple(func), ent, _TRANSFORM[fam.conformity])
    vand = elem.dual_matrix(span)
    coeffs = np.einsum("kj,jcm->kcm", np.linalg.inv(vand).T, span)
    coeffs.setflags(write=False)
    return ReferenceElement(fam, dim, coeffs, expo, tuple(func), ent, elem.transform)


@lru_cache(maxsize=None)
def _cached(family: Family, degree: int, dim: int) -> ReferenceElement:
    return _build(ElementFamily(family, degree), dim)


def make_reference_element(family, degree: int | None = None, dim: int = 2) -> ReferenceElement:
    """Reference element by family and degree, e.g. ``("R", 2, 3)`` or ``("N12", dim=2)``."""
    if isinstance(family, ElementFamily):
        fam = family
    elif isinstance(family, Family):
        fam = ElementFamily(family, degree)
    elif degree is None:
        fam = ElementFamily.parse(family)
    else:
        fam = ElementFamily(Family(family), degree)
    if dim not in (2, 3):
        raise UnsupportedElementError(f"dimension {dim}")
    return _cached(fam.family, fam.degree, dim)


# --------------------------------------------------------------------------
# tabulation and push-forward

_ALLOWED = {
    "H1": {"value", "grad"},
    "L2": {"value", "grad"},
    "Hcurl": {"value", "grad", "curl"},
    "Hdiv": {"value", "grad", "div"},
}


def tabulate(elem: ReferenceElement, points, what: str = "value") -> np.ndarray:
    """Basis data at reference points.

    value -> (nbasis, npts, ncomp); grad -> (nbasis, npts, ncomp, dim);
    div -> (nbasis, npts); curl -> (nbasis, npts) in 2D, (nbasis, npts, 3) in 3D.
    """
    if what not in _ALLOWED[elem.conformity]:
        raise ValueError(f"{what} is not defined for {elem.conformity} element {elem.family}")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if what == "value":
        return np.einsum("fcm,mp->fpc", elem.coeffs, poly.tabulate_monomials(elem.exponents, points))
    g = np.einsum("fcm,mpd->fpcd", elem.coeffs, poly.tabulate_monomial_grads(elem.exponents, points))
    if what == "grad":
        return g
    if what == "div":
        return np.einsum("fpcc->fp", g)
    if elem.dim == 2:
        return g[:, :, 1, 0] - g[:, :, 0, 1]
    return np.stack(
        [g[:, :, 2, 1] - g[:, :, 1, 2], g[:, :, 0, 2] - g[:, :, 2, 0], g[:, :, 1, 0] - g[:, :, 0, 1]],
        axis=-1,
    )


def _geometry(jac):
    J = np.asarray(jac, dtype=float)
    J = J[None] if J.ndim == 2 else J
    det = np.linalg.det(J)
    if np.any(np.abs(det) < 1e-14):
        raise GeometryError("degenerate cell Jacobian")
    return J, det, np.linalg.inv(J)


def push_forward(elem: ReferenceElement, jac, table: np.ndarray, what: str = "value") -> np.ndarray:
    """Map a reference table to physical cells; output gains a leading cell axis."""
    J, det, Jinv = _geometry(jac)
    nc = len(J)
    if what == "grad":
        # map the values first, then the derivative direction
        if elem.transform == "covariant":
            vals = np.einsum("bpjd,cjk->cbpkd", table, Jinv)
        elif elem.transform == "contravariant":
            vals = np.einsum("cij,bpjd->cbpid", J, table) / det[:, None, None, None, None]
        else:
            vals = np.broadcast_to(table, (nc,) + table.shape)
        return np.einsum("cbpkd,cde->cbpke", vals, Jinv)
    if elem.transform == "affine":
        if what != "value":
            raise ValueError(what)
        return np.broadcast_to(table, (nc,) + table.shape).copy()
    if elem.transform == "covariant":
        if what == "value":
            return np.einsum("bpj,cjk->cbpk", table, Jinv)
        if what == "curl":
            if elem.dim == 2:
                return table[None] / det[:, None, None]
            return np.einsum("cij,bpj->cbpi", J, table) / det[:, None, None, None]
    if elem.transform == "contravariant":
        if what == "value":
            return np.einsum("cij,bpj->cbpi", J, table) / det[:, None, None, None]
        if what == "div":
            return table[None] / det[:, None, None]
    raise ValueError(f"cannot push forward {what} for {elem.family}")


def pull_back_values(elem: ReferenceElement, jac, values: np.ndarray) -> np.ndarray:
    """Inverse Piola map of physical values (ncells, npts, ncomp) to reference values."""
    J, det, Jinv = _geometry(jac)
    if elem.transform == "affine":
        return values
    if elem.transform == "covariant":
        return np.einsum("cji,cpj->cpi", J, values)
    return det[:, None, None] * np.einsum("cij,cpj->cpi", Jinv, values)


# --------------------------------------------------------------------------
# quartets

_QUARTET_RE = re.compile(r"L([12])N([12])([12])([RB])([12])D([012])")


@dataclass(frozen=True)
class ElementQuartet:
    disp: ElementFamily
    grad: ElementFamily
    stress: ElementFamily
    pressure: ElementFamily

    def __post_init__(self):
        expected = ("H1", "Hcurl", "Hdiv", "L2")
        got = tuple(f.conformity for f in (self.disp, self.grad, self.stress, self.pressure))
        if got != expected:
            raise UnsupportedElementError(f"quartet conformities {got} should be {expected}")

    @property
    def name(self) -> str:
        kind = "1" if self.grad.family is Family.NEDELEC1 else "2"
        return (
            f"L{self.disp.degree}N{kind}{self.grad.degree}"
            f"{self.stress.name}D{self.pressure.degree}"
        )

    @classmethod
    def parse(cls, name: str) -> "ElementQuartet":
        m = _QUARTET_RE.fullmatch(name.strip())
        if not m:
            raise UnsupportedElementError(f"cannot parse quartet {name!r}")
        lk, nk, nd, sf, sd, dk = m.groups()
        return cls(
            ElementFamily(Family.LAGRANGE, int(lk)),
            ElementFamily(Family.NEDELEC1 if nk == "1" else Family.NEDELEC2, int(nd)),
            ElementFamily(Family.RAVIART_THOMAS if sf == "R" else Family.BDM, int(sd)),
            ElementFamily(Family.DISCONTINUOUS, int(dk)),
        )

    def __str__(self) -> str:
        return self.name

    def max_degree(self) -> int:
        """Largest polynomial degree appearing in any of the four spaces."""
        return max(f.degree for f in (self.disp, self.grad, self.stress, self.pressure))


def all_quartets() -> list[ElementQuartet]:
    names = [
        f"L{l}N{i}{j}{s}{k}D{d}"
        for l in (1, 2)
        for i in (1, 2)
        for j in (1, 2)
        for s in ("R", "B")
        for k in (1, 2)
        for d in (0, 1, 2)
    ]
    return [ElementQuartet.parse(n) for n in names]
