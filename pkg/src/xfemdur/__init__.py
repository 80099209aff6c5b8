"""Two-dimensional XFEM crack propagation with decomposed updating reanalysis."""

from .assembly import Material, MaterialField, assemble_full
from .crack import CrackPolyline, classify_elements
from .enrichment import DofMap, update_dof_map
from .fracture import advance_crack, interaction_integral_sif, propagation_angle
from .mesh import Rectangle, build_mesh
from .sim import RunConfig, Scenario, run
from .solver import DURSolver, cholesky

__version__ = "0.1.0"

__all__ = [
    "CrackPolyline",
    "DURSolver",
    "DofMap",
    "Material",
    "MaterialField",
    "Rectangle",
    "RunConfig",
    "Scenario",
    "advance_crack",
    "assemble_full",
    "build_mesh",
    "cholesky",
    "classify_elements",
    "interaction_integral_sif",
    "propagation_angle",
    "run",
    "update_dof_map",
]
