from .problem import FunctionNlp, NlpProblem
from .solver import (
    INFEASIBLE,
    ITER_LIMIT,
    OPTIMAL,
    TIME_LIMIT,
    EvaluatorError,
    InteriorPointSolver,
    Solution,
    SolveOptions,
    Solver,
    kkt_residual,
    solve,
)

__all__ = [
    "FunctionNlp",
    "NlpProblem",
    "INFEASIBLE",
    "ITER_LIMIT",
    "OPTIMAL",
    "TIME_LIMIT",
    "EvaluatorError",
    "InteriorPointSolver",
    "Solution",
    "SolveOptions",
    "Solver",
    "kkt_residual",
    "solve",
]
