"""Finite elements for symmetric tensor fields conforming in the div-div
operator, with a mixed solver for the clamped plate problem."""

__version__ = "0.1.0"

from .mesh import TriMesh, load_mesh, read_mesh, refine_uniform, structured_unit_square, write_mesh
from .polyalg import Poly2D, SymTensorPoly2D, TensorField, VectorField, VectorPoly2D
from .element import (DivDivElement, DofFunctional, HermiteElement, RotRotElement,
                      interpolate_commuting, rotate_element)
from .assembly import (GlobalDofMap, HermiteDofMap, HybridSystem, MixedSystem,
                       assemble_hybrid, assemble_mixed, build_global_spaces)
from .biharmonic import (ManufacturedCase, PiecewiseField, Solution, default_case,
                         error_report, norm_2h, postprocess_deflection,
                         solve_hybrid, solve_mixed)
from .complexes import (ComplexReport, check_commuting_diagram,
                        check_global_fem_complex, check_local_fem_complexes,
                        check_poly_complexes)

__all__ = [name for name in dir() if not name.startswith("_")]
