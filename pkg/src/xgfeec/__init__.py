"""Extended Galerkin discretizations of the Hodge Laplacian on 2D simplicial meshes."""

from .diff_forms import FormSpaceSpec, PolyForm
from .fe_spaces import XGSpaces, check_inclusions, make_xg_spaces
from .harness import (ManufacturedCase, StudyConfig, StudyReport, convergence_study,
                      infsup_sweep, register_case, rho_limit_study)
from .hybridization import HybridXG, condense, local_solve, reconstruct
from .mesh_complex import SimplicialMesh, build_structured_mesh
from .saddle_solver import SingularSystemError, infsup_estimate, solve
from .xg_assembly import (ASSEMBLERS, BlockSystem, ConfigurationError, PenaltyParams,
                          assemble_afw, assemble_afw_dual, assemble_four_field_I,
                          assemble_four_field_II, assemble_seven_field, assemble_three_field,
                          penalty_schedule)

__version__ = "0.1.0"
