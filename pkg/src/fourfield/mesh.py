"""Simplicial meshes of the unit square and unit cube.

Every cell stores its vertex ids in ascending order.  Sub-entities (edges,
faces) are stored as ascending vertex tuples too, so the orientation of an
edge or face seen from any incident cell is the same: it is fixed by the
global vertex numbering alone.  Reference-element DOF functionals are
defined with respect to this ordering, which makes H(curl)/H(div) DOFs
agree across cells without per-pair sign bookkeeping.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Callable, NamedTuple

import numpy as np

GAMMA1 = "Gamma1"
GAMMA2 = "Gamma2"
_TAGS = (GAMMA1, GAMMA2)


class MeshError(ValueError):
    """Invalid mesh construction or boundary configuration."""


def local_edges(dim: int) -> list[tuple[int, int]]:
    """Local edges of the reference simplex as ascending vertex pairs."""
    return list(combinations(range(dim + 1), 2))


def local_faces(dim: int) -> list[tuple[int, int, int]]:
    return list(combinations(range(dim + 1), 3)) if dim == 3 else []


def _unique_entities(cells: np.ndarray, local: list[tuple]) -> tuple[np.ndarray, np.ndarray]:
    k = len(local[0])
    cand = np.stack([cells[:, list(e)] for e in local], axis=1).reshape(-1, k)
    ents, inv = np.unique(cand, axis=0, return_inverse=True)
    return ents, inv.reshape(len(cells), len(local))


@dataclass(frozen=True, eq=False)
class SimplicialMesh:
    dim: int
    vertices: np.ndarray
    cells: np.ndarray
    edges: np.ndarray
    faces: np.ndarray
    cell_edges: np.ndarray
    cell_faces: np.ndarray
    boundary_tags: dict[int, str] = field(default_factory=dict)

    @classmethod
    def from_cells(cls, vertices, cells) -> "SimplicialMesh":
        vertices = np.asarray(vertices, dtype=float)
        cells = np.sort(np.asarray(cells, dtype=np.int64), axis=1)
        dim = vertices.shape[1]
        if dim not in (2, 3) or cells.shape[1] != dim + 1:
            raise MeshError(f"cells of width {cells.shape[1]} do not match dimension {dim}")
        edges, cell_edges = _unique_entities(cells, local_edges(dim))
        if dim == 3:
            faces, cell_faces = _unique_entities(cells, local_faces(dim))
        else:
            faces = np.zeros((0, 3), dtype=np.int64)
            cell_faces = np.zeros((len(cells), 0), dtype=np.int64)
        mesh = cls(dim, vertices, cells, edges, faces, cell_edges, cell_faces)
        if np.any(np.abs(mesh.jacobian_dets()) <= 1e-14):
            raise MeshError("degenerate cell")
        return mesh

    # -- geometry ---------------------------------------------------------
    def jacobians(self) -> np.ndarray:
        """Affine maps x = v0 + J xhat, shape (ncells, dim, dim)."""
        v = self.vertices[self.cells]
        return np.transpose(v[:, 1:, :] - v[:, :1, :], (0, 2, 1))

    def jacobian_dets(self) -> np.ndarray:
        return np.linalg.det(self.jacobians())

    def orientation(self) -> np.ndarray:
        """Per-cell sign of det J for the ascending vertex order."""
        return np.sign(self.jacobian_dets()).astype(int)

    def cell_volumes(self) -> np.ndarray:
        return np.abs(self.jacobian_dets()) / math.factorial(self.dim)

    def diameter(self) -> float:
        """Largest circumdiameter over all cells."""
        v = self.vertices[self.cells]
        A = 2.0 * (v[:, 1:, :] - v[:, :1, :])
        b = np.sum(v[:, 1:, :] ** 2, axis=2) - np.sum(v[:, :1, :] ** 2, axis=2)
        c = np.linalg.solve(A, b[..., None])[..., 0]
        return float(2.0 * np.max(np.linalg.norm(c - v[:, 0, :], axis=1)))

    # -- topology ---------------------------------------------------------
    @property
    def facets(self) -> np.ndarray:
        return self.edges if self.dim == 2 else self.faces

    @property
    def cell_facets(self) -> np.ndarray:
        return self.cell_edges if self.dim == 2 else self.cell_faces

    def facet_cell_counts(self) -> np.ndarray:
        return np.bincount(self.cell_facets.ravel(), minlength=len(self.facets))

    def boundary_facets(self) -> np.ndarray:
        return np.flatnonzero(self.facet_cell_counts() == 1)

    def boundary_edges(self) -> np.ndarray:
        if self.dim == 2:
            return self.boundary_facets()
        bf = self.faces[self.boundary_facets()]
        pairs = np.unique(np.concatenate([bf[:, [0, 1]], bf[:, [0, 2]], bf[:, [1, 2]]]), axis=0)
        return self._edge_ids(pairs)

    def _edge_ids(self, pairs: np.ndarray) -> np.ndarray:
        lookup = {tuple(e): i for i, e in enumerate(self.edges.tolist())}
        return np.array([lookup[tuple(p)] for p in np.sort(pairs, axis=1).tolist()], dtype=np.int64)

    def facet_centroids(self, ids=None) -> np.ndarray:
        f = self.facets if ids is None else self.facets[ids]
        return self.vertices[f].mean(axis=1)

    # -- boundary split ---------------------------------------------------
    def tagged_facets(self, tag: str) -> np.ndarray:
        return np.array(sorted(i for i, t in self.boundary_tags.items() if t == tag), dtype=np.int64)

    def tagged_closure(self, tag: str) -> tuple[np.ndarray, np.ndarray]:
        """Vertices and edges lying on the closure of the facets carrying ``tag``."""
        facets = self.facets[self.tagged_facets(tag)].reshape(-1, self.dim)
        verts = np.unique(facets)
        if len(facets) == 0:
            return verts, np.zeros(0, dtype=np.int64)
        if self.dim == 2:
            return verts, self.tagged_facets(tag)
        pairs = np.concatenate([facets[:, [0, 1]], facets[:, [0, 2]], facets[:, [1, 2]]])
        return verts, np.unique(self._edge_ids(pairs))

    def to_json(self) -> str:
        tags = {t: [self.facets[i].tolist() for i in self.tagged_facets(t)] for t in _TAGS}
        doc = {
            "dim": self.dim,
            "vertices": self.vertices.tolist(),
            "cells": self.cells.tolist(),
            "boundary_tags": tags,
        }
        return json.dumps(doc, indent=None, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "SimplicialMesh":
        doc = json.loads(text)
        mesh = cls.from_cells(doc["vertices"], doc["cells"])
        lookup = {tuple(f): i for i, f in enumerate(mesh.facets.tolist())}
        tags = {}
        for tag, facets in doc.get("boundary_tags", {}).items():
            for f in facets:
                tags[lookup[tuple(sorted(f))]] = tag
        return replace(mesh, boundary_tags=tags)


class EntityCounts(NamedTuple):
    N_v: int
    N_ed: int
    N_f: int | None
    N_el: int
    N_ed_boundary: int


def entity_counts(mesh: SimplicialMesh) -> EntityCounts:
    return EntityCounts(
        N_v=len(mesh.vertices),
        N_ed=len(mesh.edges),
        N_f=len(mesh.faces) if mesh.dim == 3 else None,
        N_el=len(mesh.cells),
        N_ed_boundary=len(mesh.boundary_edges()),
    )


def build_structured_square(n: int) -> SimplicialMesh:
    """n x n subsquares, each split along its lower-left to upper-right diagonal."""
    if n < 1:
        raise MeshError("need at least one subdivision per side")
    x = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(x, x, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    vid = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)  # vid[j, i] -> (x_i, y_j)
    v00, v10 = vid[:-1, :-1].ravel(), vid[:-1, 1:].ravel()
    v01, v11 = vid[1:, :-1].ravel(), vid[1:, 1:].ravel()
    cells = np.concatenate([np.column_stack([v00, v10, v11]), np.column_stack([v00, v01, v11])])
    return SimplicialMesh.from_cells(vertices, cells)


# Kuhn split: one tetrahedron per permutation of the axes, all sharing the
# main diagonal of the subcube.
_KUHN_PATHS = [
    (0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0),
]


def build_structured_cube(n: int) -> SimplicialMesh:
    if n < 1:
        raise MeshError("need at least one subdivision per side")
    x = np.linspace(0.0, 1.0, n + 1)
    Z, Y, X = np.meshgrid(x, x, x, indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def vid(i, j, k):
        return i + (n + 1) * (j + (n + 1) * k)

    base = np.array([(i, j, k) for k in range(n) for j in range(n) for i in range(n)])
    cells = []
    for path in _KUHN_PATHS:
        corner = base.copy()
        tet = [vid(*corner.T)]
        for axis in path:
            corner = corner.copy()
            corner[:, axis] += 1
            tet.append(vid(*corner.T))
        cells.append(np.column_stack(tet))
    return SimplicialMesh.from_cells(vertices, np.concatenate(cells))


def tag_boundary(mesh: SimplicialMesh, predicate: Callable[[np.ndarray], str | None]) -> SimplicialMesh:
    """Tag every boundary facet with ``predicate(centroid)``."""
    tags = {}
    for fid, c in zip(mesh.boundary_facets().tolist(), mesh.facet_centroids(mesh.boundary_facets())):
        tag = predicate(c)
        if tag not in _TAGS:
            raise MeshError(f"boundary facet {fid} at {c.tolist()} left untagged ({tag!r})")
        tags[fid] = tag
    return replace(mesh, boundary_tags=tags)


def all_dirichlet(x) -> str:
    return GAMMA1


def traction_on_right(x) -> str:
    """Gamma2 on the face x = 1, Gamma1 elsewhere."""
    return GAMMA2 if abs(x[0] - 1.0) < 1e-12 else GAMMA1


def clamped_on_left(x) -> str:
    """Gamma1 on the face x = 0, Gamma2 elsewhere."""
    return GAMMA1 if abs(x[0]) < 1e-12 else GAMMA2


def clamped_on_bottom(x) -> str:
    """Gamma1 on the face y = 0, Gamma2 elsewhere."""
    return GAMMA1 if abs(x[1]) < 1e-12 else GAMMA2


SPLITS = {
    "dirichlet": all_dirichlet,
    "traction-right": traction_on_right,
    "clamped-left": clamped_on_left,
    "clamped-bottom": clamped_on_bottom,
}


def remove_vertex_star(mesh: SimplicialMesh, vertex: int) -> SimplicialMesh:
    """Punch a hole by deleting every cell incident to an interior vertex."""
    keep = ~np.any(mesh.cells == vertex, axis=1)
    if keep.all():
        raise MeshError(f"vertex {vertex} has no incident cells")
    cells = mesh.cells[keep]
    used = np.unique(cells)
    renum = np.full(len(mesh.vertices), -1)
    renum[used] = np.arange(len(used))
    return SimplicialMesh.from_cells(mesh.vertices[used], renum[cells])
