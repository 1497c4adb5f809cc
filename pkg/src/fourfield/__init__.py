"""Four-field mixed finite elements for incompressible nonlinear elasticity.

Unknowns are displacement, displacement gradient, first Piola-Kirchhoff
stress and pressure, discretized with Lagrange, Nedelec, Raviart-Thomas or
BDM, and discontinuous elements on simplicial meshes.
"""

from .elements import ElementQuartet, all_quartets, make_reference_element
from .material import NeoHookean, exact_cube, exact_square
from .mesh import build_structured_cube, build_structured_square, tag_boundary
from .stability import full_rankness, scan_combinations
from .system import build_spaces, newton_solve

__all__ = [
    "ElementQuartet",
    "NeoHookean",
    "all_quartets",
    "build_spaces",
    "build_structured_cube",
    "build_structured_square",
    "exact_cube",
    "exact_square",
    "full_rankness",
    "make_reference_element",
    "newton_solve",
    "scan_combinations",
    "tag_boundary",
]
