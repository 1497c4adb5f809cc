"""Residual and Newton-step assembly for the four-field formulation.

Unknowns are the displacement U (vector Lagrange), the displacement
gradient K (rows in H(curl)), the first Piola-Kirchhoff stress P (rows in
H(div)) and the pressure p (discontinuous).  The residual has four segments

    r1(Y)   = <P, grad Y> - <B, Y> - <T, Y>_Gamma2
    rc(L)   = <grad U - K, L>
    rd(Pi)  = <mu F - p F^{-T} - P, Pi>
    rD(q)   = <det F - 1, q>

with F = I + K, and the Newton matrix is its exact Jacobian, whose block
pattern (rows and columns ordered U, K, P, p) is

    [ 0    0    S1d  0   ]
    [ Sc1  Scc  0    0   ]
    [ 0    Sdc  Sdd  SdD ]
    [ 0    SDc  0    0   ]
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from itertools import combinations
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .dofmap import DofMap, build_dofmap, interpolate
from .elements import ElementQuartet, push_forward, reference_vertices, tabulate
from .material import NeoHookean, _deformation, body_force, determinant, first_pk
from .mesh import GAMMA1, GAMMA2, SimplicialMesh
from .quadrature import MAX_DEGREE, simplex_rule

log = logging.getLogger(__name__)

BLOCK_NAMES = ("S1d", "Sc1", "Scc", "Sdc", "Sdd", "SdD", "SDc")
# (row field, column field) of every nonzero block
BLOCK_POSITION = {
    "S1d": (0, 2), "Sc1": (1, 0), "Scc": (1, 1), "Sdc": (2, 1),
    "Sdd": (2, 2), "SdD": (2, 3), "SDc": (3, 1),
}
FIELDS = ("U", "K", "P", "p")


class SingularSystemError(RuntimeError):
    """The Newton matrix is singular to working precision."""


class StateDomainError(ValueError):
    """det(I + K_h) is not positive at some quadrature point."""


def quadrature_degree(quartet: ElementQuartet) -> int:
    return 2 * quartet.max_degree() + 2


# --------------------------------------------------------------------------
# spaces and states


@dataclass(eq=False)
class MixedSpaces:
    mesh: SimplicialMesh
    quartet: ElementQuartet
    U: DofMap
    K: DofMap
    P: DofMap
    p: DofMap
    qdeg: int

    @property
    def dofmaps(self) -> tuple[DofMap, DofMap, DofMap, DofMap]:
        return (self.U, self.K, self.P, self.p)

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return tuple(d.global_dim for d in self.dofmaps)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.dims)])

    @cached_property
    def cells(self) -> "CellData":
        return CellData.build(self, self.qdeg)

    def cell_data(self, degree: int) -> "CellData":
        return self.cells if degree == self.qdeg else CellData.build(self, degree)

    def dirichlet_dofs(self) -> np.ndarray:
        """Displacement DOFs on the closure of Gamma1, all components."""
        verts, edges = self.mesh.tagged_closure(GAMMA1)
        base = np.concatenate([self.U.entity_dofs(0, verts), self.U.entity_dofs(1, edges)])
        return np.sort(self.U.all_copies(np.unique(base)))


def build_spaces(mesh: SimplicialMesh, quartet, qdeg: int | None = None) -> MixedSpaces:
    if isinstance(quartet, str):
        quartet = ElementQuartet.parse(quartet)
    d = mesh.dim
    return MixedSpaces(
        mesh,
        quartet,
        build_dofmap(mesh, quartet.disp, rows=d),
        build_dofmap(mesh, quartet.grad, rows=d),
        build_dofmap(mesh, quartet.stress, rows=d),
        build_dofmap(mesh, quartet.pressure, rows=1),
        quadrature_degree(quartet) if qdeg is None else qdeg,
    )


@dataclass(eq=False)
class MixedState:
    spaces: MixedSpaces
    U: np.ndarray
    K: np.ndarray
    P: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        for name, n in zip(FIELDS, self.spaces.dims):
            v = np.asarray(getattr(self, name))
            if not np.issubdtype(v.dtype, np.floating):
                v = v.astype(float)
            if v.shape != (n,):
                raise ValueError(f"{name} has shape {v.shape}, expected ({n},)")
            setattr(self, name, v)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.U, self.K, self.P, self.p])

    @classmethod
    def from_vector(cls, spaces: MixedSpaces, x: np.ndarray) -> "MixedState":
        o = spaces.offsets
        return cls(spaces, *(x[o[i]:o[i + 1]].copy() for i in range(4)))

    def __add__(self, z: np.ndarray) -> "MixedState":
        return MixedState.from_vector(self.spaces, self.vector() + z)


def stress_free_state(spaces: MixedSpaces, mu: float) -> MixedState:
    """U = 0, K = 0, P = 0, p = mu: the unloaded root."""
    nU, nK, nP, npr = spaces.dims
    p = interpolate(spaces.p, lambda x: np.full(len(x), float(mu)))
    return MixedState(spaces, np.zeros(nU), np.zeros(nK), np.zeros(nP), p)


def reference_state(spaces: MixedSpaces, pressure: float = 0.0) -> MixedState:
    """Undeformed state with a uniform pressure."""
    state = stress_free_state(spaces, 1.0)
    state.p = interpolate(spaces.p, lambda x: np.full(len(x), float(pressure)))
    return state


def interpolate_exact(spaces: MixedSpaces, exact, mat: NeoHookean) -> MixedState:
    return MixedState(
        spaces,
        interpolate(spaces.U, exact.U),
        interpolate(spaces.K, exact.gradU),
        interpolate(spaces.P, lambda x: exact.P(mat, x)),
        interpolate(spaces.p, exact.p),
    )


# --------------------------------------------------------------------------
# cell and facet data


@dataclass(eq=False)
class CellData:
    """Physical basis data at the quadrature points of every cell."""

    X: np.ndarray       # (nc, nq, d) quadrature points
    w: np.ndarray       # (nc, nq) weights times |det J|
    phi: np.ndarray     # (nc, nbU, nq) Lagrange values
    dphi: np.ndarray    # (nc, nbU, nq, d)
    psi: np.ndarray     # (nc, nbK, nq, d) H(curl) values
    chi: np.ndarray     # (nc, nbP, nq, d) H(div) values
    eta: np.ndarray     # (nc, nbp, nq) pressure values
    spaces: MixedSpaces = field(repr=False)
    points: np.ndarray = field(repr=False, default=None)  # reference points

    @classmethod
    def build(cls, spaces: MixedSpaces, degree: int) -> "CellData":
        mesh = spaces.mesh
        rule = simplex_rule(mesh.dim, min(degree, MAX_DEGREE))
        J = mesh.jacobians()
        X = mesh.vertices[mesh.cells[:, 0]][:, None, :] + np.einsum("cij,pj->cpi", J, rule.points)
        w = np.abs(np.linalg.det(J))[:, None] * rule.weights[None, :]

        def phys(dm: DofMap, what: str):
            return push_forward(dm.element, J, tabulate(dm.element, rule.points, what), what)

        return cls(
            X, w,
            phys(spaces.U, "value")[..., 0],
            phys(spaces.U, "grad")[..., 0, :],
            phys(spaces.K, "value"),
            phys(spaces.P, "value"),
            phys(spaces.p, "value")[..., 0],
            spaces,
            rule.points,
        )

    def astype(self, dtype) -> "CellData":
        arrays = {k: getattr(self, k).astype(dtype) for k in ("X", "w", "phi", "dphi", "psi", "chi", "eta")}
        return replace(self, **arrays)

    def fields(self, state: MixedState, dtype=np.float64):
        """U (nc, nq, d); gradU, K, P (nc, nq, d, d) and p (nc, nq) at the quadrature points."""
        s = self.spaces
        vals = {name: getattr(state, name).astype(dtype) for name in FIELDS}
        gU = vals["U"][s.U.cell_dofs_all()]
        gradU = np.einsum("cai,ciqj->cqaj", gU, self.dphi)
        K = np.einsum("crk,ckqj->cqrj", vals["K"][s.K.cell_dofs_all()], self.psi)
        P = np.einsum("crk,ckqj->cqrj", vals["P"][s.P.cell_dofs_all()], self.chi)
        p = np.einsum("cm,cmq->cq", vals["p"][s.p.cell_dofs_all()[:, 0, :]], self.eta)
        U = np.einsum("cai,ciq->cqa", gU, self.phi)
        return U, gradU, K, P, p

    def _physical(self, dm: DofMap, what: str) -> np.ndarray:
        J = self.spaces.mesh.jacobians()
        return push_forward(dm.element, J, tabulate(dm.element, self.points, what), what)

    def curl_psi(self) -> np.ndarray:
        return self._physical(self.spaces.K, "curl")

    def div_chi(self) -> np.ndarray:
        return self._physical(self.spaces.P, "div")


@dataclass(eq=False)
class FacetData:
    """Lagrange data on the Gamma2 facets, for the traction integral."""

    cells: np.ndarray   # (nf,) owning cell
    X: np.ndarray       # (nf, nq, d)
    N: np.ndarray       # (nf, d) outward unit normal
    w: np.ndarray       # (nf, nq)
    phi: np.ndarray     # (nf, nbU, nq)

    @classmethod
    def build(cls, spaces: MixedSpaces, degree: int, tag: str = GAMMA2) -> "FacetData":
        mesh = spaces.mesh
        d = mesh.dim
        facets = mesh.tagged_facets(tag)
        rule = simplex_rule(d - 1, min(degree, MAX_DEGREE))
        ref = reference_vertices(d)
        local = list(combinations(range(d + 1), d))
        owner = {}
        for c, row in enumerate(mesh.cell_facets.tolist()):
            for lf, f in enumerate(row):
                owner.setdefault(f, (c, lf))
        nq = len(rule.weights)
        nbU = spaces.U.element.nbasis
        out_c = np.zeros(len(facets), dtype=np.int64)
        X = np.zeros((len(facets), nq, d))
        N = np.zeros((len(facets), d))
        w = np.zeros((len(facets), nq))
        phi = np.zeros((len(facets), nbU, nq))
        for i, f in enumerate(facets.tolist()):
            c, lf = owner[f]
            lv = local[lf]
            xi = ref[lv[0]] + rule.points @ (ref[list(lv[1:])] - ref[lv[0]])
            phi[i] = tabulate(spaces.U.element, xi, "value")[..., 0]
            v = mesh.vertices[mesh.cells[c]]
            fv = v[list(lv)]
            X[i] = fv[0] + rule.points @ (fv[1:] - fv[0])
            if d == 2:
                t = fv[1] - fv[0]
                n = np.array([t[1], -t[0]])
                measure = np.linalg.norm(t)
            else:
                n = np.cross(fv[1] - fv[0], fv[2] - fv[0])
                measure = 0.5 * np.linalg.norm(n)
            n = n / np.linalg.norm(n)
            opposite = v[[j for j in range(d + 1) if j not in lv][0]]
            if np.dot(n, opposite - fv[0]) > 0:
                n = -n
            N[i] = n
            # reference facet simplex has measure 1/(d-1)!
            w[i] = rule.weights * measure * (1 if d == 2 else 2)
            out_c[i] = c
        return cls(out_c, X, N, w, phi)


# --------------------------------------------------------------------------
# loads and boundary data


@dataclass(frozen=True)
class Loads:
    body: Callable | None = None        # X (..., d) -> B (..., d)
    traction: Callable | None = None    # (X (n, d), N (n, d)) -> T (n, d)


def manufactured_loads(mat: NeoHookean, exact) -> Loads:
    return Loads(
        body_force(mat, exact),
        lambda X, N: np.einsum("...ij,...j->...i", exact.P(mat, X), N),
    )


def _scatter(n: int, idx: np.ndarray, vals: np.ndarray) -> np.ndarray:
    if vals.dtype == np.float64:
        return np.bincount(idx.ravel(), weights=vals.ravel(), minlength=n)
    out = np.zeros(n, dtype=vals.dtype)
    np.add.at(out, idx.ravel(), vals.ravel())
    return out


# --------------------------------------------------------------------------
# assembly


def assemble_residual(spaces: MixedSpaces, state: MixedState, mat: NeoHookean,
                      loads: Loads | None = None, dtype=np.float64) -> np.ndarray:
    """Full residual vector [r1, rc, rd, rD] (Dirichlet rows included).

    ``dtype=np.longdouble`` evaluates the whole assembly in extended
    precision, which pushes the cancellation floor of finite-difference
    checks well below double-precision round-off.
    """
    return np.concatenate(_residual_segments(spaces, state, mat, loads, dtype))


def _check_domain(K: np.ndarray):
    det = determinant(K + np.eye(K.shape[-1], dtype=K.dtype))
    if np.any(det <= 0) or not np.all(np.isfinite(det)):
        raise StateDomainError("det(I + K_h) is not positive at a quadrature point")


def _residual_segments(spaces, state, mat, loads, dtype=np.float64):
    cd = spaces.cells if dtype == np.float64 else spaces.cells.astype(dtype)
    _, gradU, K, P, p = cd.fields(state, dtype)
    _check_domain(K)
    nU, nK, nP, npr = spaces.dims
    gU, gK, gP = (dm.cell_dofs_all() for dm in spaces.dofmaps[:3])
    gp = spaces.p.cell_dofs_all()[:, 0, :]

    loc1 = np.einsum("cq,cqaj,ciqj->cai", cd.w, P, cd.dphi)
    if loads is not None and loads.body is not None:
        B = np.asarray(loads.body(cd.X), dtype=dtype)
        loc1 -= np.einsum("cq,cqa,ciq->cai", cd.w, B, cd.phi)
    r1 = _scatter(nU, gU, loc1)
    if loads is not None and loads.traction is not None and len(spaces.mesh.tagged_facets(GAMMA2)):
        fd = _facet_data(spaces)
        nf, nq, d = fd.X.shape
        T = np.asarray(loads.traction(fd.X.reshape(-1, d), np.repeat(fd.N, nq, axis=0)), dtype=dtype)
        locf = np.einsum("fq,fqa,fiq->fai", fd.w.astype(dtype), T.reshape(nf, nq, d), fd.phi.astype(dtype))
        r1 -= _scatter(nU, gU[fd.cells], locf)

    rc = _scatter(nK, gK, np.einsum("cq,cqrj,ckqj->crk", cd.w, gradU - K, cd.psi))
    stress = first_pk(mat, K, p) - P
    rd = _scatter(nP, gP, np.einsum("cq,cqrj,ckqj->crk", cd.w, stress, cd.chi))
    inc = determinant(K + np.eye(K.shape[-1], dtype=K.dtype)) - 1.0
    rD = _scatter(npr, gp, np.einsum("cq,cq,cmq->cm", cd.w, inc, cd.eta))
    return r1, rc, rd, rD


_FACET_CACHE: dict = {}


def _facet_data(spaces: MixedSpaces) -> FacetData:
    key = id(spaces)
    hit = _FACET_CACHE.get(key)
    if hit is None or hit[0] is not spaces:
        hit = (spaces, FacetData.build(spaces, spaces.qdeg))
        _FACET_CACHE.clear()
        _FACET_CACHE[key] = hit
    return hit[1]


def _coo(rows: np.ndarray, cols: np.ndarray, vals: np.ndarray, shape) -> sp.csr_matrix:
    return sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape)


def _rowwise(local: np.ndarray, grow: np.ndarray, gcol: np.ndarray, shape) -> sp.csr_matrix:
    """Block with one scalar local matrix repeated on every row copy.

    local (nc, a, b); grow (nc, rows, a); gcol (nc, rows, b).
    """
    nc, nr, a = grow.shape
    b = gcol.shape[2]
    R = np.broadcast_to(grow[:, :, :, None], (nc, nr, a, b))
    C = np.broadcast_to(gcol[:, :, None, :], (nc, nr, a, b))
    V = np.broadcast_to(local[:, None, :, :], (nc, nr, a, b))
    return _coo(R, C, V, shape)


@dataclass(eq=False)
class BlockSystem:
    """Newton matrix blocks and residual segments.

    After :func:`apply_dirichlet` with elimination the displacement blocks
    act on the free DOFs only; ``free_U`` and ``lift`` record how to expand
    a solution back to the full displacement vector.
    """

    blocks: dict
    residual: tuple
    dims: tuple
    spaces: MixedSpaces | None = None
    free_U: np.ndarray | None = None
    fixed_U: np.ndarray | None = None
    lift: np.ndarray | None = None
    rhs_override: tuple | None = None

    @property
    def n1(self) -> int:
        return self.dims[0]

    @property
    def nc(self) -> int:
        return self.dims[1]

    @property
    def nd(self) -> int:
        return self.dims[2]

    @property
    def nD(self) -> int:
        return self.dims[3]

    def block_grid(self) -> list[list]:
        grid = [[None] * 4 for _ in range(4)]
        for name, (i, j) in BLOCK_POSITION.items():
            grid[i][j] = self.blocks[name]
        if "S11" in self.blocks:
            grid[0][0] = self.blocks["S11"]
        return grid

    def matrix(self) -> sp.csr_matrix:
        grid = self.block_grid()
        # keep zero block columns/rows of the right size
        for i in range(4):
            if all(b is None for b in grid[i]):
                grid[i][0] = sp.csr_matrix((self.dims[i], self.dims[0]))
        return sp.bmat(grid, format="csr")

    def rhs(self) -> np.ndarray:
        segs = self.rhs_override if self.rhs_override is not None else tuple(-r for r in self.residual)
        return np.concatenate(segs)

    def residual_vector(self) -> np.ndarray:
        return np.concatenate(self.residual)

    def expand(self, z: np.ndarray) -> np.ndarray:
        """Increment in the full unknown ordering (constrained entries lifted)."""
        if self.free_U is None or self.spaces is None:
            return z
        nU = self.spaces.dims[0]
        zU = np.zeros(nU)
        zU[self.free_U] = z[:self.n1]
        zU[self.fixed_U] = self.lift
        return np.concatenate([zU, z[self.n1:]])


def assemble_newton_system(spaces: MixedSpaces, state: MixedState, mat: NeoHookean,
                           loads: Loads | None = None) -> BlockSystem:
    cd = spaces.cells
    _, gradU, K, P, p = cd.fields(state)
    _check_domain(K)
    nU, nK, nP, npr = spaces.dims
    gU, gK, gP = (dm.cell_dofs_all() for dm in spaces.dofmaps[:3])
    gp = spaces.p.cell_dofs_all()

    w = cd.w
    m_ud = np.einsum("cq,ciqj,ckqj->cik", w, cd.dphi, cd.chi)
    m_cu = np.einsum("cq,ckqj,ciqj->cki", w, cd.psi, cd.dphi)
    m_cc = np.einsum("cq,ckqj,clqj->ckl", w, cd.psi, cd.psi)
    m_dd = np.einsum("cq,ckqj,clqj->ckl", w, cd.chi, cd.chi)

    _, det, G = _deformation(K)
    d = spaces.mesh.dim
    if isinstance(mat, NeoHookean):
        # mu delta_rs delta_JS part is a row-wise mass, kept separate
        Tp = np.einsum("cq,cqrS,cqsJ->cqrJsS", p, G, G)
        sdc = np.einsum("cq,ckqJ,cqrJsS,clqS->crksl", w, cd.chi, Tp, cd.psi, optimize=True)
        m_dc = np.einsum("cq,ckqj,clqj->ckl", w, cd.chi, cd.psi)
        sdc += mat.mu * np.einsum("rs,ckl->crksl", np.eye(d), m_dc)
    else:
        A = mat.elasticity(K) + np.einsum("cq,cqrS,cqsJ->cqrJsS", p, G, G)
        sdc = np.einsum("cq,ckqJ,cqrJsS,clqS->crksl", w, cd.chi, A, cd.psi, optimize=True)
    Rdc = np.broadcast_to(gP[:, :, :, None, None], sdc.shape)
    Cdc = np.broadcast_to(gK[:, None, None, :, :], sdc.shape)

    GChi = np.einsum("cqrJ,ckqJ->ckqr", G, cd.chi)
    sdD = -np.einsum("cq,cmq,ckqr->crkm", w, cd.eta, GChi)
    GPsi = np.einsum("cqsS,clqS->clqs", G, cd.psi)
    sDc = np.einsum("cq,cq,cmq,clqs->cmsl", w, det, cd.eta, GPsi)

    blocks = {
        "S1d": _rowwise(m_ud, gU, gP, (nU, nP)),
        "Sc1": _rowwise(m_cu, gK, gU, (nK, nU)),
        "Scc": _rowwise(-m_cc, gK, gK, (nK, nK)),
        "Sdc": _coo(Rdc, Cdc, sdc, (nP, nK)),
        "Sdd": _rowwise(-m_dd, gP, gP, (nP, nP)),
        "SdD": _coo(
            np.broadcast_to(gP[:, :, :, None], sdD.shape),
            np.broadcast_to(gp[:, 0, None, None, :], sdD.shape),
            sdD, (nP, npr)),
        "SDc": _coo(
            np.broadcast_to(gp[:, 0, :, None, None], sDc.shape),
            np.broadcast_to(gK[:, None, :, :], sDc.shape),
            sDc, (npr, nK)),
    }
    residual = _residual_segments(spaces, state, mat, loads)
    return BlockSystem(blocks, residual, spaces.dims, spaces)


# --------------------------------------------------------------------------
# boundary conditions


def dirichlet_values(spaces: MixedSpaces, Ubar: Callable | None) -> np.ndarray:
    """Nodal interpolant of the boundary displacement on the Gamma1 DOFs."""
    fixed = spaces.dirichlet_dofs()
    if Ubar is None:
        return np.zeros(len(fixed))
    return interpolate(spaces.U, Ubar)[fixed]


def apply_dirichlet(system: BlockSystem, state: MixedState, Ubar: Callable | None = None,
                    mode: str = "eliminate") -> BlockSystem:
    """Impose U_h = I(Ubar) on Gamma1 for the Newton increment.

    The increment on the constrained DOFs is ``I(Ubar) - U_current``.  With
    ``mode="eliminate"`` the displacement rows (tests) and columns
    (trials) of those DOFs are removed and the lifting moves to the right
    side.  ``mode="identity"`` keeps the full size, zeroes the constrained
    rows and columns and places identity rows carrying the increment.
    """
    spaces = system.spaces
    fixed = spaces.dirichlet_dofs()
    nU = spaces.dims[0]
    free = np.setdiff1d(np.arange(nU), fixed)
    lift = dirichlet_values(spaces, Ubar) - state.U[fixed]
    b = system.blocks
    r1, rc, rd, rD = (-r for r in system.residual)
    rc = rc - b["Sc1"][:, fixed] @ lift
    if mode == "eliminate":
        blocks = dict(b)
        blocks["S1d"] = b["S1d"][free, :].tocsr()
        blocks["Sc1"] = b["Sc1"][:, free].tocsr()
        rhs = (r1[free], rc, rd, rD)
        dims = (len(free),) + tuple(system.dims[1:])
        return replace(system, blocks=blocks, dims=dims, free_U=free, fixed_U=fixed,
                       lift=lift, rhs_override=rhs)
    if mode == "identity":
        keep = np.ones(nU)
        keep[fixed] = 0.0
        Dk = sp.diags(keep)
        blocks = dict(b)
        blocks["S1d"] = (Dk @ b["S1d"]).tocsr()
        blocks["Sc1"] = (b["Sc1"] @ Dk).tocsr()
        blocks["S11"] = sp.diags(1.0 - keep).tocsr()
        r1 = r1.copy()
        r1[fixed] = lift
        return replace(system, blocks=blocks, rhs_override=(r1, rc, rd, rD))
    raise ValueError(f"unknown Dirichlet mode {mode!r}")


# --------------------------------------------------------------------------
# solve


def solve_sparse(A: sp.spmatrix, b: np.ndarray, rtol: float = 1e-10, pivot_tol: float = 1e-13) -> np.ndarray:
    """Direct LU solve that reports singular matrices instead of returning noise."""
    A = sp.csc_matrix(A)
    try:
        lu = splu(A)
    except RuntimeError as exc:
        raise SingularSystemError(str(exc)) from exc
    piv = np.abs(lu.U.diagonal())
    if piv.size and piv.min() <= pivot_tol * piv.max():
        raise SingularSystemError(f"pivot ratio {piv.min() / piv.max():.2e} below {pivot_tol:g}")
    x = lu.solve(b)
    r = b - A @ x
    x = x + lu.solve(r)  # one step of iterative refinement
    bnorm = np.linalg.norm(b)
    res = np.linalg.norm(b - A @ x)
    if not np.all(np.isfinite(x)) or res > rtol * max(bnorm, np.finfo(float).tiny):
        raise SingularSystemError(f"relative residual {res / max(bnorm, 1e-300):.2e} exceeds {rtol:g}")
    return x


def solve_linear(system: BlockSystem, rtol: float = 1e-10) -> np.ndarray:
    """Solve the Newton system; returns the increment in the system's ordering."""
    b = system.rhs()
    if not np.any(b):
        return np.zeros_like(b)
    return solve_sparse(system.matrix(), b, rtol=rtol)


# --------------------------------------------------------------------------
# Newton


@dataclass
class NewtonReport:
    iterations: int
    history: list
    converged: bool
    state: MixedState
    diverged: bool = False
    message: str = ""


def reduced_residual(spaces, state, mat, loads, Ubar) -> np.ndarray:
    """Residual on the free tests plus the Gamma1 mismatch U - I(Ubar)."""
    r1, rc, rd, rD = _residual_segments(spaces, state, mat, loads)
    fixed = spaces.dirichlet_dofs()
    free = np.setdiff1d(np.arange(spaces.dims[0]), fixed)
    mismatch = state.U[fixed] - dirichlet_values(spaces, Ubar)
    return np.concatenate([r1[free], rc, rd, rD, mismatch])


def newton_solve(spaces: MixedSpaces, mat: NeoHookean, loads: Loads | None, Ubar: Callable | None,
                 initial: MixedState, tol: float = 1e-9, maxit: int = 25) -> NewtonReport:
    """Newton iterations u <- u + z; stops when |r| <= tol (1 + |r0|)."""
    state = initial
    r0 = float(np.linalg.norm(reduced_residual(spaces, state, mat, loads, Ubar)))
    history = [r0]
    growth = 0
    for it in range(1, maxit + 1):
        system = apply_dirichlet(assemble_newton_system(spaces, state, mat, loads), state, Ubar)
        try:
            z = solve_linear(system)
        except SingularSystemError as exc:
            return NewtonReport(it - 1, history, False, state, message=f"singular: {exc}")
        state = state + system.expand(z)
        try:
            r = float(np.linalg.norm(reduced_residual(spaces, state, mat, loads, Ubar)))
        except (StateDomainError, ValueError) as exc:
            return NewtonReport(it, history, False, state, diverged=True, message=str(exc))
        history.append(r)
        log.debug("newton %d: |r| = %.3e", it, r)
        if r <= tol * (1.0 + r0):
            return NewtonReport(it, history, True, state)
        growth = growth + 1 if r > history[-2] else 0
        if growth >= 3:
            return NewtonReport(it, history, False, state, diverged=True,
                                message="residual grew over 3 consecutive iterations")
    return NewtonReport(maxit, history, False, state, message="maximum iterations reached")


# --------------------------------------------------------------------------
# errors


def l2_errors(spaces: MixedSpaces, state: MixedState, exact, mat: NeoHookean) -> dict[str, float]:
    """L2 norms of U_h - U_e, K_h - grad U_e, P_h - P_e and p_h - p_e."""
    cd = spaces.cell_data(min(spaces.qdeg + 2, MAX_DEGREE))
    U, _, K, P, p = cd.fields(state)
    X = cd.X

    def norm(diff, axes):
        return float(np.sqrt(np.sum(cd.w * np.sum(diff**2, axis=axes))))

    return {
        "E_U": norm(U - exact.U(X), (2,)),
        "E_K": norm(K - exact.gradU(X), (2, 3)),
        "E_P": norm(P - exact.P(mat, X), (2, 3)),
        "E_p": float(np.sqrt(np.sum(cd.w * (p - exact.p(X)) ** 2))),
    }
