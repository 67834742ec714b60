"""helmfree: matrix-free multigrid-preconditioned Krylov solvers for the
3D heterogeneous Helmholtz equation on blockwise-partitioned grids."""

from .grid import (BlockExtent, Grid3, HaloField, coarsen, full_extent,
                   make_grid)
from .operators import (Dirichlet, OperatorSpec, Sommerfeld, StencilOperator,
                        apply_operator)
from .multigrid import MGConfig, build_hierarchy, mg_precondition
from .krylov import ConvergenceReport, SolverConfig, run_solver
from .partition import (DistContext, NullFabric, SocketFabric, ThreadHub,
                        Topology, partition_grid)
from .problems import (closed_off_problem, build_problem, error_norms,
                       gen_salt_surrogate, read_velocity_grid, salt_problem,
                       wedge_problem)
from .config import RunConfig, parse_config
from .runner import run_solve
from .reporting import RunReport, compute_scaling

__version__ = "1.0.0"

__all__ = [
    "BlockExtent", "Grid3", "HaloField", "coarsen", "full_extent",
    "make_grid", "Dirichlet", "OperatorSpec", "Sommerfeld",
    "StencilOperator", "apply_operator", "MGConfig", "build_hierarchy",
    "mg_precondition", "ConvergenceReport", "SolverConfig", "run_solver",
    "DistContext", "NullFabric", "SocketFabric", "ThreadHub", "Topology",
    "partition_grid", "closed_off_problem", "build_problem", "error_norms",
    "gen_salt_surrogate", "read_velocity_grid", "salt_problem",
    "wedge_problem", "RunConfig", "parse_config", "run_solve", "RunReport",
    "compute_scaling",
]
