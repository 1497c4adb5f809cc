import json

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from fourfield.material import NeoHookean
from fourfield.mesh import SPLITS, build_structured_cube, build_structured_square, tag_boundary
from fourfield.stability import (
    INEQUALITY_OF,
    KINDS,
    SubmatrixKind,
    analyse_mesh,
    assemble_norm_gram,
    dimension_inequalities,
    extract_submatrix,
    full_rankness,
    infsup_alpha,
    numerical_rank,
    reference_system,
    scan_combinations,
    submatrix_full_rankness,
    submatrix_shape,
    verdicts_to_json,
)
from fourfield.system import apply_dirichlet, assemble_newton_system, build_spaces

MAT = NeoHookean(1.0)


def _spaces(quartet, n=2):
    return build_spaces(tag_boundary(build_structured_square(n), SPLITS["clamped-bottom"]), quartet)


def test_full_rankness_of_simple_matrices():
    assert full_rankness(np.eye(5)) == 1.0
    assert full_rankness(np.zeros((3, 4))) == 0.0
    assert full_rankness(np.diag([1.0, 1.0, 0.0])) == pytest.approx(2 / 3)
    # more rows than columns can never be injective on the test side
    assert full_rankness(np.ones((4, 2))) == 0.25
    assert full_rankness(np.eye(4)[:, :2], relative_to="min") == 1.0
    with pytest.raises(ValueError):
        full_rankness(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        full_rankness(np.eye(2), relative_to="max")


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.integers(1, 6), st.floats(1e-6, 1e6), st.integers(0, 2**31 - 1))
def test_rank_is_invariant_under_scaling(n, k, scale, seed):
    rng = np.random.default_rng(seed)
    k = min(k, n)
    A = rng.standard_normal((n, k)) @ rng.standard_normal((k, n))
    assert numerical_rank(A) == k
    assert numerical_rank(scale * A) == k
    assert full_rankness(sp.csr_matrix(scale * A)) == pytest.approx(k / n)


def test_dimension_inequalities_examples():
    assert dimension_inequalities(162, 112, 112, 32) == {"i": True, "ii": False, "iii": True, "iv": False}
    assert dimension_inequalities(50, 112, 192, 112) == {"i": False, "ii": False, "iii": False, "iv": True}
    assert not any(dimension_inequalities(10, 10, 10, 10).values())
    with pytest.raises(ValueError):
        dimension_inequalities(-1, 0, 0, 0)


@pytest.mark.parametrize("quartet", ["L1N11R2D0", "L2N21B1D1"])
def test_submatrix_shapes(quartet):
    system = reference_system(_spaces(quartet), MAT)
    n1, nc, nd, nD = system.dims
    expected = {"S1d": (n1, nd), "SDc": (nD, nc), "B": (n1 + nc, n1 + nc + nd),
                "C": (n1 + nd, nc + nd + nD), "D": (nc + nD, n1 + nc), "E": (nd + nD, nc + nd + nD)}
    for kind in KINDS:
        assert extract_submatrix(system, kind).shape == expected[kind.value]
        assert submatrix_shape(system.dims, kind) == expected[kind.value]


# two-dimensional families that always violate a counting inequality
COUNTING_FAMILIES = [
    ("L2N11R1D0", "i"), ("L2N22R1D2", "i"),
    ("L1N11R2D2", "ii"), ("L2N11B1D2", "ii"),
    ("L1N12R2D1", "iv"), ("L1N22B2D1", "iv"),
    ("L1N21R1D2", "iv"), ("L1N12B2D2", "iv"),
]


@pytest.mark.parametrize("quartet, inequality", COUNTING_FAMILIES)
def test_flagged_quartets_have_deficient_submatrix(quartet, inequality):
    verdict = analyse_mesh(_spaces(quartet), MAT)
    assert verdict.flags[inequality]
    assert verdict.FR[INEQUALITY_OF[inequality].value] < 1.0


def test_stable_quartet_has_full_rank_everywhere():
    verdict = analyse_mesh(_spaces("L1N11R2D0"), MAT)
    assert all(v == 1.0 for v in verdict.FR.values())
    assert not any(verdict.flags.values())
    # the counts use the displacement space with Gamma1 DOFs removed
    assert verdict.n1 < verdict.n1_unconstrained


def test_stress_block_at_reference_state_is_full_rank():
    """E has the mass block Sdd and the pressure coupling; its rank reduces to SdD and Sdc."""
    system = reference_system(_spaces("L2N12B2D0"), MAT)
    assert full_rankness(extract_submatrix(system, SubmatrixKind.E)) == 1.0
    assert full_rankness(extract_submatrix(system, SubmatrixKind.B)) == 1.0


def test_scan_summary_and_json():
    meshes = [("n2", tag_boundary(build_structured_square(2), SPLITS["clamped-bottom"]))]
    verdicts = scan_combinations(meshes, quartets=["L1N11R2D0", "L2N11R1D0", "L1N11R2D2"])
    assert [v.stable for v in verdicts] == [True, False, False]
    assert "S1d" in verdicts[1].violations()
    doc = json.loads(verdicts_to_json(verdicts))
    assert doc["summary"]["stable"] == 1
    assert doc["summary"]["stable_quartets"] == ["L1N11R2D0"]
    assert doc["verdicts"][2]["flags"]["ii"]


def test_scan_records_failures_without_stopping(monkeypatch):
    import fourfield.stability as stability

    real = stability.analyse_mesh

    def flaky(spaces, *args, **kwargs):
        if spaces.quartet.name == "L2N11R1D0":
            raise np.linalg.LinAlgError("SVD did not converge")
        return real(spaces, *args, **kwargs)

    monkeypatch.setattr(stability, "analyse_mesh", flaky)
    meshes = [("n2", tag_boundary(build_structured_square(2), SPLITS["clamped-bottom"]))]
    verdicts = scan_combinations(meshes, quartets=["L2N11R1D0", "L1N11R2D0"])
    assert "LinAlgError" in verdicts[0].error and not verdicts[0].stable
    assert verdicts[1].stable
    assert json.loads(verdicts_to_json(verdicts))["summary"]["failed"] == ["L2N11R1D0"]


def test_norm_gram_is_spd_and_alpha_matches_generalized_eigenproblem():
    spaces = _spaces("L1N11R2D0")
    system = reference_system(spaces, MAT)
    grams = assemble_norm_gram(spaces, system.free_U)
    est = infsup_alpha(system, grams)
    # independent route: alpha^2 is the smallest eigenvalue of S^T G^{-1} S v = lambda G v
    S = system.matrix().toarray()
    G = grams.matrix().toarray()
    lam = sla.eigh(S.T @ np.linalg.solve(G, S), G, eigvals_only=True)
    assert_allclose(est.alpha, np.sqrt(lam.min()), rtol=1e-6)
    assert est.alpha > est.rank_tolerance


def test_alpha_vanishes_for_rank_deficient_quartet():
    spaces = _spaces("L2N11R1D0")
    system = reference_system(spaces, MAT)
    est = infsup_alpha(system, assemble_norm_gram(spaces, system.free_U))
    assert est.alpha < est.rank_tolerance


@pytest.mark.parametrize("quartet", ["L1N11R2D0", "L2N11R1D0", "L1N12B2D2", "L2N21R2D1", "L2N11B2D0"])
def test_rank_identities_match_direct_svd(quartet, random_state):
    spaces = _spaces(quartet)
    state = random_state(spaces, 0.2, np.random.default_rng(7))
    system = apply_dirichlet(assemble_newton_system(spaces, state, MAT), state)
    for kind in KINDS:
        assert submatrix_full_rankness(system, kind) == submatrix_full_rankness(system, kind, "direct")
    with pytest.raises(ValueError):
        submatrix_full_rankness(system, "B", method="qr")


def test_unconstrained_count_decides_lowest_order_gradient_in_3d():
    """Quadratic displacement with N11 in 3D: full rank with Gamma1 clamped, but inequality (iii)
    holds when the clamped displacement DOFs are counted too, so the quartet is not stable."""
    meshes = [("n1", tag_boundary(build_structured_cube(1), SPLITS["clamped-bottom"]))]
    verdict, reference = scan_combinations(meshes, quartets=["L2N11R2D0", "L2N21R2D0"])
    mesh = verdict.meshes[0]
    assert all(v == 1.0 for v in verdict.FR.values())
    assert (mesh.n1_unconstrained, mesh.nc, mesh.nD) == (81, 57, 6)
    assert not verdict.flags["iii"] and verdict.flags_unconstrained["iii"]
    assert verdict.violations() == ["C"] and not verdict.stable
    assert reference.stable
