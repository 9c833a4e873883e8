"""Small dense LP and QP solvers with certificates and local derivatives."""

from .common import DegenerateActiveSet, IterationLimit, SolveResult, SolverError, Status
from .lp import LpProblem, lp_solution_vjp, solve_lp, solve_lp_batch
from .qp import (
    FEAS_TOL,
    KKT_TOL,
    STRICT_TOL,
    QpProblem,
    kkt_residual,
    qp_projection_jacobian,
    qp_projection_vjp,
    solve_qp,
    solve_qp_projection,
)

__all__ = [
    "DegenerateActiveSet",
    "FEAS_TOL",
    "IterationLimit",
    "KKT_TOL",
    "LpProblem",
    "QpProblem",
    "STRICT_TOL",
    "SolveResult",
    "SolverError",
    "Status",
    "kkt_residual",
    "lp_solution_vjp",
    "qp_projection_jacobian",
    "qp_projection_vjp",
    "solve_lp",
    "solve_lp_batch",
    "solve_qp",
    "solve_qp_projection",
]
