"""Global DOF numbering, interpolation and evaluation of finite element fields.

A space with ``rows > 1`` is ``rows`` copies of the base scalar/vector space:
a vector field built from a scalar element (displacement) or a tensor
field whose rows live in a vector element (gradient, stress).  Global index
of copy ``r`` and base DOF ``g`` is ``r * base_dim + g``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .elements import (
    ReferenceElement,
    make_reference_element,
    pull_back_values,
    push_forward,
    tabulate,
)
from .mesh import SimplicialMesh


@dataclass(frozen=True, eq=False)
class DofMap:
    mesh: SimplicialMesh
    element: ReferenceElement
    rows: int
    cell_dofs: np.ndarray   # (ncells, nbasis) base-space indices
    base_dim: int
    entity_offsets: dict     # entity_dim -> (offset, dofs per entity)

    @property
    def global_dim(self) -> int:
        return self.rows * self.base_dim

    @property
    def kind(self) -> str:
        if self.element.ncomp == 1:
            return "scalar" if self.rows == 1 else "vector"
        return "vector" if self.rows == 1 else "tensor"

    def cell_dofs_all(self) -> np.ndarray:
        """(ncells, rows, nbasis) global indices, copy-major."""
        r = np.arange(self.rows)[None, :, None] * self.base_dim
        return r + self.cell_dofs[:, None, :]

    def entity_dofs(self, entity_dim: int, ids) -> np.ndarray:
        """Base-space DOFs attached to the given entities."""
        ids = np.asarray(ids, dtype=np.int64)
        if entity_dim not in self.entity_offsets:
            return np.zeros(0, dtype=np.int64)
        off, k = self.entity_offsets[entity_dim]
        return (off + ids[:, None] * k + np.arange(k)[None, :]).ravel()

    def all_copies(self, base: np.ndarray) -> np.ndarray:
        return (np.arange(self.rows)[:, None] * self.base_dim + np.asarray(base)[None, :]).ravel()

    @cached_property
    def jacobians(self) -> np.ndarray:
        return self.mesh.jacobians()


def _entity_ids(mesh: SimplicialMesh, entity_dim: int) -> tuple[np.ndarray, int]:
    if entity_dim == 0:
        return mesh.cells, len(mesh.vertices)
    if entity_dim == mesh.dim:
        return np.arange(len(mesh.cells))[:, None], len(mesh.cells)
    if entity_dim == 1:
        return mesh.cell_edges, len(mesh.edges)
    return mesh.cell_faces, len(mesh.faces)


def build_dofmap(mesh: SimplicialMesh, family, degree: int | None = None, rows: int = 1) -> DofMap:
    if isinstance(family, ReferenceElement):
        elem = family
    else:
        elem = make_reference_element(family, degree, mesh.dim)
    if elem.dim != mesh.dim:
        raise ValueError(f"{elem.family} is a {elem.dim}D element, mesh is {mesh.dim}D")
    cell_dofs = np.full((len(mesh.cells), elem.nbasis), -1, dtype=np.int64)
    offsets = {}
    offset = 0
    for d in range(mesh.dim + 1):
        k = elem.dofs_per_entity(d)
        if k == 0:
            continue
        ents, count = _entity_ids(mesh, d)
        for (ed, li), local in elem.entity_dofs.items():
            if ed != d:
                continue
            cell_dofs[:, list(local)] = offset + ents[:, li][:, None] * k + np.arange(k)[None, :]
        offsets[d] = (offset, k)
        offset += count * k
    assert np.all(cell_dofs >= 0)
    return DofMap(mesh, elem, rows, cell_dofs, offset, offsets)


# --------------------------------------------------------------------------
# interpolation

def _functional_data(elem: ReferenceElement):
    pts = np.concatenate([p for p, _ in elem.functionals])
    W = np.zeros((elem.nbasis, len(pts), elem.ncomp))
    start = 0
    for i, (p, w) in enumerate(elem.functionals):
        W[i, start:start + len(p)] = w
        start += len(p)
    return pts, W


def interpolate(dofmap: DofMap, func) -> np.ndarray:
    """Canonical interpolant of ``func`` (points (N, dim) -> values).

    ``func`` returns shape (N,) for scalar spaces, (N, rows) for vector
    fields over a scalar element, and (N, rows, dim) for tensor fields.
    """
    elem, mesh = dofmap.element, dofmap.mesh
    ref_pts, W = _functional_data(elem)
    J = dofmap.jacobians
    x = mesh.vertices[mesh.cells[:, 0]][:, None, :] + np.einsum("cij,pj->cpi", J, ref_pts)
    vals = np.asarray(func(x.reshape(-1, mesh.dim)), dtype=float)
    nc, npts = x.shape[:2]
    vals = vals.reshape(nc, npts, dofmap.rows, elem.ncomp)
    out = np.zeros(dofmap.global_dim)
    gd = dofmap.cell_dofs_all()
    for r in range(dofmap.rows):
        ref_vals = pull_back_values(elem, J, vals[:, :, r, :])
        local = np.einsum("ipk,cpk->ci", W, ref_vals)
        out[gd[:, r, :].ravel()] = local.ravel()
    return out


# --------------------------------------------------------------------------
# evaluation

def basis_on_cells(dofmap: DofMap, ref_points: np.ndarray, what: str = "value") -> np.ndarray:
    """Physical basis data on every cell at the given reference points."""
    elem = dofmap.element
    return push_forward(elem, dofmap.jacobians, tabulate(elem, ref_points, what), what)


def evaluate(dofmap: DofMap, coeffs: np.ndarray, ref_points: np.ndarray, what: str = "value",
             basis: np.ndarray | None = None) -> np.ndarray:
    """Field values at ``ref_points`` of every cell.

    value -> (ncells, npts, rows, ncomp) squeezed to (ncells, npts) for a
    scalar space and (ncells, npts, rows) for a vector field over a scalar
    element; grad adds a trailing dim axis; div gives (ncells, npts, rows).
    """
    b = basis_on_cells(dofmap, ref_points, what) if basis is None else basis
    local = np.asarray(coeffs)[dofmap.cell_dofs_all()]  # (nc, rows, nb)
    if what == "value":
        out = np.einsum("crb,cbpk->cprk", local, b)
    elif what == "grad":
        out = np.einsum("crb,cbpkd->cprkd", local, b)
    else:
        out = np.einsum("crb,cbp...->cpr...", local, b)
    if what in ("value", "grad") and dofmap.element.ncomp == 1:
        out = out[:, :, :, 0]
        if dofmap.rows == 1 and what == "value":
            out = out[:, :, 0]
    return out


def physical_points(mesh: SimplicialMesh, ref_points: np.ndarray) -> np.ndarray:
    v0 = mesh.vertices[mesh.cells[:, 0]]
    return v0[:, None, :] + np.einsum("cij,pj->cpi", mesh.jacobians(), ref_points)
