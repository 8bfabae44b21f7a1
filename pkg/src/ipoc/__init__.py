"""Interior-point solvers for constrained optimal control.

The package solves the first-order necessary conditions of state- and
control-constrained optimal control problems by collocation, driving a
log-barrier (primal) or complementarity-smoothing (primal-dual) parameter
to zero along a geometric continuation schedule.
"""

from .errors import (
    IpocError,
    DimensionError,
    GradientCheckError,
    InteriorViolationError,
    InfeasibleStartError,
    SingularMatrixError,
    NoConvergenceError,
    MeshLimitError,
    ContinuationError,
)
from .ocp import OcpSpec, OcpDims, to_fixed_time, validate
from .bvpdae import Mesh, SolverOptions, DaeSolution, solve, interpolate
from .continuation import (
    ContinuationConfig,
    RunReport,
    epsilon_schedule,
    run_primal,
    run_primal_dual,
)
from .diagnostics import KktReport, kkt_report, interiority_check, cost_integral
from .problems import BenchmarkBundle, REGISTRY

__all__ = [
    "IpocError", "DimensionError", "GradientCheckError",
    "InteriorViolationError", "InfeasibleStartError", "SingularMatrixError",
    "NoConvergenceError", "MeshLimitError", "ContinuationError",
    "OcpSpec", "OcpDims", "to_fixed_time", "validate",
    "Mesh", "SolverOptions", "DaeSolution", "solve", "interpolate",
    "ContinuationConfig", "RunReport", "epsilon_schedule",
    "run_primal", "run_primal_dual",
    "KktReport", "kkt_report", "interiority_check", "cost_integral",
    "BenchmarkBundle", "REGISTRY",
]
