import numpy as np
import pytest
from numpy.testing import assert_allclose

from fourfield.mesh import (
    GAMMA1,
    GAMMA2,
    MeshError,
    SimplicialMesh,
    build_structured_cube,
    build_structured_square,
    clamped_on_bottom,
    entity_counts,
    remove_vertex_star,
    tag_boundary,
    traction_on_right,
)


@pytest.mark.parametrize("n", [1, 2, 4, 8])
def test_square_euler_and_edge_identities(n):
    c = entity_counts(build_structured_square(n))
    assert c.N_el - c.N_ed + c.N_v == 1
    assert 2 * c.N_ed - c.N_ed_boundary == 3 * c.N_el


def test_square_counts_n4():
    c = entity_counts(build_structured_square(4))
    assert (c.N_v, c.N_ed, c.N_el, c.N_ed_boundary) == (25, 56, 32, 16)


@pytest.mark.parametrize("n, expected", [(1, (8, 19, 18, 6)), (2, (27, 98, 120, 48)), (3, (64, 279, 378, 162))])
def test_cube_counts(n, expected):
    c = entity_counts(build_structured_cube(n))
    assert (c.N_v, c.N_ed, c.N_f, c.N_el) == expected
    # Euler characteristic of a ball
    assert c.N_v - c.N_ed + c.N_f - c.N_el == 1


@pytest.mark.parametrize("builder, n", [(build_structured_square, 3), (build_structured_cube, 2)])
def test_volumes_fill_domain(builder, n):
    mesh = builder(n)
    assert_allclose(mesh.cell_volumes().sum(), 1.0, rtol=1e-14)
    assert np.all(np.abs(mesh.jacobian_dets()) > 0)


def test_cells_are_sorted_and_entities_shared():
    mesh = build_structured_cube(2)
    assert np.all(np.diff(mesh.cells, axis=1) > 0)
    assert np.all(np.diff(mesh.edges, axis=1) > 0)
    assert np.all(np.diff(mesh.faces, axis=1) > 0)
    # each interior face is seen by two cells, boundary faces by one
    counts = mesh.facet_cell_counts()
    assert set(np.unique(counts)) == {1, 2}
    assert (counts == 1).sum() == 6 * 2 * 2 * 2


def test_diameter_of_uniform_square():
    assert_allclose(build_structured_square(4).diameter(), np.sqrt(2) / 4)


def test_hole_changes_euler_characteristic():
    mesh = remove_vertex_star(build_structured_square(4), 12)
    c = entity_counts(mesh)
    assert c.N_el - c.N_ed + c.N_v == 0


def test_tagging_covers_every_boundary_facet():
    mesh = tag_boundary(build_structured_square(3), traction_on_right)
    assert len(mesh.boundary_tags) == len(mesh.boundary_facets())
    right = mesh.tagged_facets(GAMMA2)
    assert_allclose(mesh.facet_centroids(right)[:, 0], 1.0)
    verts, edges = mesh.tagged_closure(GAMMA1)
    assert len(verts) == 3 * 4 - 2  # three sides of 4 vertices sharing two corners


def test_untagged_facet_is_rejected():
    with pytest.raises(MeshError):
        tag_boundary(build_structured_square(2), lambda x: None)


def test_clamped_bottom_closure_in_3d():
    mesh = tag_boundary(build_structured_cube(2), clamped_on_bottom)
    verts, edges = mesh.tagged_closure(GAMMA1)
    assert_allclose(mesh.vertices[verts][:, 1], 0.0)
    assert len(verts) == 9
    assert len(edges) == 16  # 12 grid edges + 4 diagonals on a 2x2 face


def test_json_roundtrip_keeps_tags():
    mesh = tag_boundary(build_structured_square(2), traction_on_right)
    back = SimplicialMesh.from_json(mesh.to_json())
    assert_allclose(back.vertices, mesh.vertices)
    assert np.array_equal(back.cells, mesh.cells)
    assert back.boundary_tags == mesh.boundary_tags


def test_degenerate_cell_rejected():
    with pytest.raises(MeshError):
        SimplicialMesh.from_cells([[0, 0], [1, 0], [2, 0]], [[0, 1, 2]])
