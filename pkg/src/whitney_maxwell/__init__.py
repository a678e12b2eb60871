"""Lowest-order Whitney form discretization of Maxwell's equations on tetrahedra."""

from .mesh import TetMesh, generate_box_mesh, mesh_size, read_mesh, write_mesh
from .derham import DeRhamComplex, DiscreteField, build_complex
from .fields import SourceField, TensorField
from .semidiscrete import SimState, StepRecord, SystemMatrices, build_system, initial_state, run

__all__ = [
    "TetMesh", "generate_box_mesh", "mesh_size", "read_mesh", "write_mesh",
    "DeRhamComplex", "DiscreteField", "build_complex",
    "SourceField", "TensorField",
    "SimState", "StepRecord", "SystemMatrices", "build_system", "initial_state", "run",
]

__version__ = "0.1.0"
