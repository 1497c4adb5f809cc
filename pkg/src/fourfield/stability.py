"""Discrete inf-sup diagnostics: submatrix ranks, dimension counts, and alpha.

Each inf-sup condition asks a submatrix of the Newton matrix to be
injective on its test side, i.e. to have full row rank.  The six
submatrices are cut from the block layout (rows and columns ordered
U, K, P, p, written 1, c, d, D):

    S1d : rows {1}    x cols {d}
    SDc : rows {D}    x cols {c}
    B   : rows {1, c} x cols {1, c, d}
    C   : rows {1, d} x cols {c, d, D}
    D   : rows {c, D} x cols {1, c}
    E   : rows {d, D} x cols {c, d, D}

The blocks Scc and Sdd are negative mass matrices at every state, hence
invertible, and eliminating them gives exact rank identities

    rank B = n_c + rank S1d
    rank C = n_d + rank (S1d Sdd^{-1} [Sdc  SdD])
    rank D = n_c + rank (SDc Scc^{-1} Sc1)
    rank E = n_d + rank SDc

so the scan only needs SVDs of matrices with n_1 or n_D rows.  The
direct SVD of each submatrix stays available for checking.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .elements import ElementQuartet, all_quartets
from .material import NeoHookean
from .mesh import SimplicialMesh
from .system import (
    BlockSystem,
    MixedSpaces,
    apply_dirichlet,
    assemble_newton_system,
    build_spaces,
    reference_state,
)

log = logging.getLogger(__name__)


class SubmatrixKind(enum.Enum):
    S1d = "S1d"
    SDc = "SDc"
    B = "B"
    C = "C"
    D = "D"
    E = "E"


KINDS = tuple(SubmatrixKind)

_LAYOUT = {
    SubmatrixKind.S1d: ((0,), (2,)),
    SubmatrixKind.SDc: ((3,), (1,)),
    SubmatrixKind.B: ((0, 1), (0, 1, 2)),
    SubmatrixKind.C: ((0, 2), (1, 2, 3)),
    SubmatrixKind.D: ((1, 3), (0, 1)),
    SubmatrixKind.E: ((2, 3), (1, 2, 3)),
}

# the dimension inequality that forces each submatrix to be rank deficient
INEQUALITY_OF = {"i": SubmatrixKind.S1d, "ii": SubmatrixKind.SDc, "iii": SubmatrixKind.C, "iv": SubmatrixKind.D}


def _kind(kind) -> SubmatrixKind:
    return kind if isinstance(kind, SubmatrixKind) else SubmatrixKind(kind)


def submatrix_shape(dims, kind) -> tuple[int, int]:
    rows, cols = _LAYOUT[_kind(kind)]
    return sum(dims[i] for i in rows), sum(dims[j] for j in cols)


def extract_submatrix(system: BlockSystem, kind) -> sp.csr_matrix:
    rows, cols = _LAYOUT[_kind(kind)]
    grid = system.block_grid()
    sub = [[grid[i][j] if grid[i][j] is not None else sp.csr_matrix((system.dims[i], system.dims[j]))
            for j in cols] for i in rows]
    return sp.bmat(sub, format="csr")


def numerical_rank(matrix, tol: float | None = None) -> int:
    """Number of singular values above tol * sigma_max (default max(m, n) * eps)."""
    A = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix, dtype=float)
    if A.size == 0:
        raise ValueError("rank of an empty matrix is undefined")
    s = sla.svdvals(A, check_finite=False)
    if s[0] == 0.0:
        return 0
    rtol = max(A.shape) * np.finfo(float).eps if tol is None else tol
    return int(np.sum(s > rtol * s[0]))


def full_rankness(matrix, tol: float | None = None, relative_to: str = "rows") -> float:
    """Rank divided by the largest rank the inf-sup condition can use.

    The default divides by the number of rows (test functions), so a
    matrix with more rows than columns always scores below 1.
    ``relative_to="min"`` divides by min(rows, cols) instead.
    """
    shape = matrix.shape
    if 0 in shape:
        raise ValueError("full-rankness of an empty matrix is undefined")
    rank = numerical_rank(matrix, tol)
    if relative_to == "rows":
        return rank / shape[0]
    if relative_to == "min":
        return rank / min(shape)
    raise ValueError(f"relative_to must be 'rows' or 'min', got {relative_to!r}")


def reduced_submatrix(system: BlockSystem, kind) -> tuple[int, np.ndarray | sp.spmatrix]:
    """(k, R) with rank(submatrix) = k + rank(R) and rows(submatrix) = k + rows(R)."""
    kind = _kind(kind)
    if "S11" in system.blocks:
        raise ValueError("rank reduction needs the eliminated Dirichlet form")
    b = system.blocks
    if kind is SubmatrixKind.S1d:
        return 0, b["S1d"]
    if kind is SubmatrixKind.SDc:
        return 0, b["SDc"]
    if kind is SubmatrixKind.B:
        return system.nc, b["S1d"]
    if kind is SubmatrixKind.E:
        return system.nd, b["SDc"]
    if kind is SubmatrixKind.C:
        # Sdd is symmetric, so Sdd^{-1} S1d^T gives the transpose of S1d Sdd^{-1}
        X = splu(sp.csc_matrix(b["Sdd"])).solve(b["S1d"].T.toarray())
        coupling = sp.hstack([b["Sdc"], b["SdD"]]).tocsr()
        return system.nd, np.asarray((coupling.T @ X).T)
    X = splu(sp.csc_matrix(b["Scc"])).solve(b["Sc1"].toarray())
    return system.nc, np.asarray(b["SDc"] @ X)


def submatrix_full_rankness(system: BlockSystem, kind, method: str = "reduced",
                            relative_to: str = "rows") -> float:
    """Full-rankness of one inf-sup submatrix, directly or through the rank identities."""
    if method == "direct":
        return full_rankness(extract_submatrix(system, kind), relative_to=relative_to)
    if method != "reduced":
        raise ValueError(f"method must be 'reduced' or 'direct', got {method!r}")
    rows, cols = submatrix_shape(system.dims, kind)
    if 0 in (rows, cols):
        raise ValueError("full-rankness of an empty matrix is undefined")
    k, R = reduced_submatrix(system, kind)
    rank = k + (numerical_rank(R) if 0 not in R.shape else 0)
    if relative_to == "rows":
        return rank / rows
    if relative_to == "min":
        return rank / min(rows, cols)
    raise ValueError(f"relative_to must be 'rows' or 'min', got {relative_to!r}")


def dimension_inequalities(n1: int, nc: int, nd: int, nD: int) -> dict[str, bool]:
    """Counting conditions, each sufficient for a singular Newton matrix."""
    if min(n1, nc, nd, nD) < 0:
        raise ValueError("space dimensions must be nonnegative")
    return {"i": n1 > nd, "ii": nD > nc, "iii": n1 > nc + nD, "iv": nD > n1}


# --------------------------------------------------------------------------
# norms and alpha


@dataclass(eq=False)
class NormGram:
    """Block-diagonal Gram matrix of the H1 x H(curl) x H(div) x L2 graph norms."""

    blocks: tuple

    def matrix(self) -> sp.csr_matrix:
        return sp.block_diag(self.blocks, format="csr")

    def cholesky_factors(self) -> list[np.ndarray]:
        out = []
        for name, G in zip(("U", "K", "P", "p"), self.blocks):
            try:
                out.append(np.linalg.cholesky(G.toarray()))
            except np.linalg.LinAlgError as exc:
                raise ValueError(f"Gram block {name} is not positive definite") from exc
        return out


def _per_row(local: np.ndarray, dofs: np.ndarray, n: int) -> sp.csr_matrix:
    nc, rows, nb = dofs.shape
    R = np.broadcast_to(dofs[:, :, :, None], (nc, rows, nb, nb))
    C = np.broadcast_to(dofs[:, :, None, :], (nc, rows, nb, nb))
    V = np.broadcast_to(local[:, None], (nc, rows, nb, nb))
    return sp.csr_matrix((V.ravel(), (R.ravel(), C.ravel())), shape=(n, n))


def assemble_norm_gram(spaces: MixedSpaces, free_U: np.ndarray | None = None) -> NormGram:
    cd = spaces.cells
    w = cd.w
    nU, nK, nP, npr = spaces.dims
    mass_u = np.einsum("cq,ciq,cjq->cij", w, cd.phi, cd.phi)
    stiff_u = np.einsum("cq,ciqd,cjqd->cij", w, cd.dphi, cd.dphi)
    GU = _per_row(mass_u + stiff_u, spaces.U.cell_dofs_all(), nU)
    if free_U is not None:
        GU = GU[free_U][:, free_U]
    curl = cd.curl_psi()
    curl = curl[..., None] if curl.ndim == 3 else curl
    GK = _per_row(np.einsum("cq,ckqj,clqj->ckl", w, cd.psi, cd.psi)
                  + np.einsum("cq,ckqj,clqj->ckl", w, curl, curl), spaces.K.cell_dofs_all(), nK)
    div = cd.div_chi()
    GP = _per_row(np.einsum("cq,ckqj,clqj->ckl", w, cd.chi, cd.chi)
                  + np.einsum("cq,ckq,clq->ckl", w, div, div), spaces.P.cell_dofs_all(), nP)
    Gp = _per_row(np.einsum("cq,cmq,cnq->cmn", w, cd.eta, cd.eta), spaces.p.cell_dofs_all(), npr)
    return NormGram((GU.tocsr(), GK, GP, Gp))


@dataclass(frozen=True)
class InfSupEstimate:
    alpha: float
    sigma_max: float
    rank_tolerance: float


def infsup_alpha(system: BlockSystem, grams: NormGram) -> InfSupEstimate:
    """Smallest singular value of L^{-1} S L^{-T}, where G = L L^T.

    This is the inf-sup constant of the Newton bilinear form measured in
    the graph norms, restricted to the discrete spaces.
    """
    S = system.matrix().toarray()
    if sum(g.shape[0] for g in grams.blocks) != S.shape[0]:
        raise ValueError("Gram matrix and Newton matrix sizes differ")
    L = sla.block_diag(*grams.cholesky_factors())
    X = sla.solve_triangular(L, S, lower=True)
    W = sla.solve_triangular(L, X.T, lower=True).T
    s = sla.svdvals(W, check_finite=False)
    tol = max(W.shape) * np.finfo(float).eps * s[0]
    return InfSupEstimate(float(s[-1]), float(s[0]), float(tol))


# --------------------------------------------------------------------------
# scan


@dataclass
class MeshVerdict:
    mesh: str
    h: float
    n1: int
    n1_unconstrained: int
    nc: int
    nd: int
    nD: int
    FR: dict
    flags: dict
    flags_unconstrained: dict


@dataclass
class StabilityVerdict:
    """Classification of one quartet over a set of meshes.

    ``FR`` is the minimum full-rankness over the meshes.  ``flags`` and
    ``flags_unconstrained`` record whether a counting inequality fired on
    any mesh, with n1 counting the free displacement DOFs or all of them.
    A condition is violated when its submatrix is rank deficient or its
    inequality fires under either count.
    """

    quartet: str
    FR: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    flags_unconstrained: dict = field(default_factory=dict)
    stable: bool = False
    meshes: list = field(default_factory=list)
    error: str | None = None

    def violates(self, kind) -> bool:
        kind = _kind(kind)
        counted = [f for f, k in INEQUALITY_OF.items() if k is kind]
        return (self.FR.get(kind.value, 1.0) < 1.0
                or any(self.flags.get(f) or self.flags_unconstrained.get(f) for f in counted))

    def violations(self) -> list[str]:
        return [k.value for k in KINDS if self.violates(k)]

    def to_dict(self) -> dict:
        return asdict(self)


def reference_system(spaces: MixedSpaces, mat: NeoHookean, pressure: float = 0.0) -> BlockSystem:
    """First Newton matrix at the undeformed configuration, Gamma1 rows and columns removed."""
    state = reference_state(spaces, pressure)
    return apply_dirichlet(assemble_newton_system(spaces, state, mat), state, None)


def analyse_mesh(spaces: MixedSpaces, mat: NeoHookean, pressure: float = 0.0, label: str = "",
                 cache: dict | None = None, method: str = "reduced") -> MeshVerdict:
    system = reference_system(spaces, mat, pressure)
    q = spaces.quartet
    # which element choices each submatrix depends on, for sharing across quartets
    parts = {
        SubmatrixKind.S1d: (q.disp, q.stress),
        SubmatrixKind.SDc: (q.grad, q.pressure),
        SubmatrixKind.B: (q.disp, q.grad, q.stress),
        SubmatrixKind.C: (q.disp, q.grad, q.stress, q.pressure),
        SubmatrixKind.D: (q.disp, q.grad, q.pressure),
        SubmatrixKind.E: (q.grad, q.stress, q.pressure),
    }
    FR = {}
    for kind in KINDS:
        key = (label, method, kind, tuple(str(e) for e in parts[kind]))
        if cache is not None and key in cache:
            FR[kind.value] = cache[key]
            continue
        FR[kind.value] = submatrix_full_rankness(system, kind, method)
        if cache is not None:
            cache[key] = FR[kind.value]
    n1, nc, nd, nD = system.dims
    n1u = spaces.dims[0]
    return MeshVerdict(
        label, spaces.mesh.diameter(), n1, n1u, nc, nd, nD, FR,
        dimension_inequalities(n1, nc, nd, nD),
        dimension_inequalities(n1u, nc, nd, nD),
    )


def scan_quartet(quartet, meshes: list[tuple[str, SimplicialMesh]], mat: NeoHookean,
                 pressure: float = 0.0, cache: dict | None = None, method: str = "reduced") -> StabilityVerdict:
    quartet = ElementQuartet.parse(quartet) if isinstance(quartet, str) else quartet
    verdict = StabilityVerdict(quartet.name)
    try:
        for label, mesh in meshes:
            verdict.meshes.append(analyse_mesh(build_spaces(mesh, quartet), mat, pressure, label, cache, method))
    except Exception as exc:  # recorded, the scan goes on
        log.warning("quartet %s failed: %s", quartet.name, exc)
        verdict.error = f"{type(exc).__name__}: {exc}"
        return verdict
    verdict.FR = {k.value: min(m.FR[k.value] for m in verdict.meshes) for k in KINDS}
    verdict.flags = {f: any(m.flags[f] for m in verdict.meshes) for f in INEQUALITY_OF}
    verdict.flags_unconstrained = {f: any(m.flags_unconstrained[f] for m in verdict.meshes) for f in INEQUALITY_OF}
    verdict.stable = not verdict.violations()
    return verdict


def scan_combinations(meshes: list[tuple[str, SimplicialMesh]], mat: NeoHookean | None = None,
                      quartets=None, pressure: float = 0.0, method: str = "reduced") -> list[StabilityVerdict]:
    mat = NeoHookean(1.0) if mat is None else mat
    quartets = all_quartets() if quartets is None else quartets
    cache: dict = {}
    return [scan_quartet(q, meshes, mat, pressure, cache, method) for q in quartets]


def verdicts_to_json(verdicts: list[StabilityVerdict]) -> str:
    doc = {
        "verdicts": [v.to_dict() for v in verdicts],
        "summary": {
            "total": len(verdicts),
            "stable": sum(v.stable for v in verdicts),
            "stable_quartets": [v.quartet for v in verdicts if v.stable],
            "failed": [v.quartet for v in verdicts if v.error],
        },
    }
    return json.dumps(doc, indent=1, sort_keys=True)
