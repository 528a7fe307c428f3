"""P1 finite elements for ``-rho Lap(u) + u = u_bar`` on the unit cube.

Structured and adaptively bisected tetrahedral meshes, AMG- and
BDDC-preconditioned CG solvers, a residual error indicator and the
experiment runners behind the ``rdfem`` command.
"""
from .adapt import Estimate, adaptive_solve, estimate, mark_dorfler
from .amg import AmgHierarchy
from .assembly import FemSystem, Solution, TargetField, build_system
from .bddc import BddcOperator, Partition, partition_geometric
from .linalg import PcgReport, pcg
from .mesh import TetMesh, bisect_marked, build_structured_cube, uniform_refine, write_vtk
from .solver import SolveResult, solve_system

__version__ = "0.1.0"

__all__ = [
    "AmgHierarchy",
    "BddcOperator",
    "Estimate",
    "FemSystem",
    "Partition",
    "PcgReport",
    "Solution",
    "SolveResult",
    "TargetField",
    "TetMesh",
    "adaptive_solve",
    "bisect_marked",
    "build_structured_cube",
    "build_system",
    "estimate",
    "mark_dorfler",
    "partition_geometric",
    "pcg",
    "solve_system",
    "uniform_refine",
    "write_vtk",
]
