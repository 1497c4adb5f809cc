import numpy as np
import pytest
from numpy.testing import assert_allclose

from fourfield.dofmap import build_dofmap, evaluate, interpolate, physical_points
from fourfield.elements import make_reference_element, push_forward, tabulate
from fourfield.mesh import build_structured_cube, build_structured_square, entity_counts

SQUARE = build_structured_square(3)
CUBE = build_structured_cube(2)


def _global_dims(c, dim):
    """DOF counts from entity counts, written out per element."""
    if dim == 2:
        return {
            ("L", 1): c.N_v, ("L", 2): c.N_v + c.N_ed,
            ("N1", 1): c.N_ed, ("N1", 2): 2 * c.N_ed + 2 * c.N_el,
            ("N2", 1): 2 * c.N_ed, ("N2", 2): 3 * c.N_ed + 3 * c.N_el,
            ("R", 1): c.N_ed, ("R", 2): 2 * c.N_ed + 2 * c.N_el,
            ("B", 1): 2 * c.N_ed, ("B", 2): 3 * c.N_ed + 3 * c.N_el,
            ("D", 0): c.N_el, ("D", 1): 3 * c.N_el, ("D", 2): 6 * c.N_el,
        }
    return {
        ("L", 1): c.N_v, ("L", 2): c.N_v + c.N_ed,
        ("N1", 1): c.N_ed, ("N1", 2): 2 * c.N_ed + 2 * c.N_f,
        ("N2", 1): 2 * c.N_ed, ("N2", 2): 3 * c.N_ed + 3 * c.N_f,
        ("R", 1): c.N_f, ("R", 2): 3 * c.N_f + 3 * c.N_el,
        ("B", 1): 3 * c.N_f, ("B", 2): 6 * c.N_f + 6 * c.N_el,
        ("D", 0): c.N_el, ("D", 1): 4 * c.N_el, ("D", 2): 10 * c.N_el,
    }


@pytest.mark.parametrize("mesh", [SQUARE, CUBE], ids=["square", "cube"])
def test_global_dimensions(mesh):
    expected = _global_dims(entity_counts(mesh), mesh.dim)
    for (family, degree), n in expected.items():
        assert build_dofmap(mesh, family, degree).global_dim == n, (family, degree)
        assert build_dofmap(mesh, family, degree, rows=mesh.dim).global_dim == mesh.dim * n


def _random_points(mesh, k=6, seed=0):
    return np.random.default_rng(seed).dirichlet(np.ones(mesh.dim + 1), size=k)[:, :mesh.dim]


# polynomial fields that lie in the named space (2D)
POLYS = {
    ("L", 2): lambda x: 1 + x[:, 0] - 2 * x[:, 0] * x[:, 1] + x[:, 1] ** 2,
    ("N1", 1): lambda x: np.column_stack([0.3 - 0.7 * x[:, 1], -0.2 + 0.7 * x[:, 0]]),
    ("N2", 1): lambda x: np.column_stack([0.3 + x[:, 0] - 2 * x[:, 1], 0.5 * x[:, 1]]),
    ("R", 1): lambda x: np.column_stack([0.3 + 0.4 * x[:, 0], -0.1 + 0.4 * x[:, 1]]),
    ("B", 2): lambda x: np.column_stack([x[:, 0] ** 2, x[:, 0] * x[:, 1] - x[:, 1]]),
    ("D", 1): lambda x: 2 - x[:, 0] + 3 * x[:, 1],
}


@pytest.mark.parametrize("key", list(POLYS), ids=lambda k: f"{k[0]}{k[1]}")
def test_interpolation_reproduces_polynomials(key):
    dm = build_dofmap(SQUARE, *key)
    coeffs = interpolate(dm, POLYS[key])
    pts = _random_points(SQUARE)
    values = evaluate(dm, coeffs, pts)
    X = physical_points(SQUARE, pts).reshape(-1, 2)
    expected = POLYS[key](X).reshape(values.shape[:2] + (-1,))
    if values.ndim == 4:
        values = values[:, :, 0, :]
    assert_allclose(values.reshape(expected.shape), expected, atol=1e-12)


def test_tensor_interpolation_of_rows():
    dm = build_dofmap(CUBE, "B", 1, rows=3)
    A = np.arange(9.0).reshape(3, 3) / 9 + np.eye(3)
    coeffs = interpolate(dm, lambda x: np.broadcast_to(A, (len(x), 3, 3)))
    values = evaluate(dm, coeffs, _random_points(CUBE))
    assert_allclose(values, np.broadcast_to(A, values.shape), atol=1e-12)


def _cell_values(dm, cell, X):
    """Field basis of one cell at physical points X."""
    mesh = dm.mesh
    J = mesh.jacobians()[cell]
    ref = np.linalg.solve(J, (X - mesh.vertices[mesh.cells[cell, 0]]).T).T
    return push_forward(dm.element, J[None], tabulate(dm.element, ref))[0]


@pytest.mark.parametrize("family, degree", [("N1", 2), ("N2", 2), ("R", 2), ("B", 1), ("L", 2)])
def test_traces_are_continuous_across_interior_edges(family, degree):
    dm = build_dofmap(SQUARE, family, degree)
    coeffs = np.random.default_rng(3).standard_normal(dm.global_dim)
    mesh = SQUARE
    edge_cells = {}
    for c, edges in enumerate(mesh.cell_edges):
        for e in edges:
            edge_cells.setdefault(e, []).append(c)
    for e, cells in edge_cells.items():
        if len(cells) != 2:
            continue
        a, b = mesh.vertices[mesh.edges[e]]
        t = b - a
        n = np.array([-t[1], t[0]])
        X = a + np.linspace(0.2, 0.8, 3)[:, None] * t
        vals = [np.einsum("b,bpk->pk", coeffs[dm.cell_dofs[c]], _cell_values(dm, c, X)) for c in cells]
        if dm.element.transform == "covariant":
            vals = [v @ t for v in vals]
        elif dm.element.transform == "contravariant":
            vals = [v @ n for v in vals]
        assert_allclose(vals[0], vals[1], atol=1e-12)


@pytest.mark.parametrize("mesh", [SQUARE, CUBE], ids=["square", "cube"])
@pytest.mark.parametrize("degree", [1, 2])
def test_lagrange_basis_sums_to_one(mesh, degree):
    dm = build_dofmap(mesh, "L", degree)
    total = evaluate(dm, np.ones(dm.global_dim), _random_points(mesh, seed=degree))
    assert_allclose(total, 1.0, atol=1e-14)


def test_element_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        build_dofmap(SQUARE, make_reference_element("L", 1, 3))
